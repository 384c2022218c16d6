#include "mplbench/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mplbench/io/container.hpp"
#include "mplbench/report.hpp"

namespace mplbench::experiment {

namespace {

std::string format_loc(double loc) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", loc);
    return buf;
}

template <typename T>
T section(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) {
        return T{};
    }
    return j.at(key).get<T>();
}

void say(const Progress& progress, const std::string& msg) {
    if (progress) {
        progress(msg);
    }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        lines.push_back(line);
    }
    return lines;
}

} // namespace

void ExperimentConfig::apply_seed() {
    encoder.seed = seed;
    train.seed = seed;
    probe.seed = seed;
}

void ExperimentConfig::validate() const {
    try {
        if (!corpus_path) {
            corpus.validate();
        }
        encoder.validate();
        train.validate();
        probe.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (output_dir.empty()) {
        throw ConfigError("output_dir is required (set it in the config or pass --out)");
    }
    if (labels.sizes.empty()) {
        throw ConfigError("labels.sizes must not be empty");
    }
    if (!(labels.subset_frac > 0.0 && labels.subset_frac <= 1.0)) {
        throw ConfigError("labels.subset_frac must lie in (0, 1]");
    }
    if (!corpus_path) {
        if (encoder.input_dim != corpus.feature_dim) {
            throw ConfigError("encoder.input_dim " + std::to_string(encoder.input_dim) +
                              " does not match corpus.feature_dim " +
                              std::to_string(corpus.feature_dim));
        }
        const std::size_t longest = corpus.units_max * corpus.frames_per_unit_max;
        if (longest > encoder.max_frames) {
            throw ConfigError("corpus utterances can reach " + std::to_string(longest) +
                              " frames but encoder.max_frames is " +
                              std::to_string(encoder.max_frames));
        }
    }
    const auto has_size = [&](std::size_t k) {
        return std::find(labels.sizes.begin(), labels.sizes.end(), k) != labels.sizes.end();
    };
    if (plan.mode == objective::PlanMode::single) {
        if (!has_size(plan.codebook_size)) {
            throw ConfigError("plan.codebook_size " + std::to_string(plan.codebook_size) +
                              " is not among labels.sizes");
        }
    } else if (labels.sizes.size() != 3) {
        throw ConfigError("a triple plan needs exactly 3 label sizes");
    }
    try {
        (void)build_plan(*this);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (tasks.empty()) {
        throw ConfigError("tasks must not be empty");
    }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json plan{{"mode", c.plan.mode == objective::PlanMode::single ? "single" : "triple"}};
    if (c.plan.mode == objective::PlanMode::single) {
        plan["codebook_size"] = c.plan.codebook_size;
    } else {
        plan["loc_big"] = c.plan.loc_big;
    }
    auto tasks = nlohmann::json::array();
    for (const auto t : c.tasks) {
        tasks.push_back(probe::to_string(t));
    }
    j = nlohmann::json{{"name", c.name.empty() ? run_name(c) : c.name},
                       {"seed", c.seed},
                       {"labels",
                        {{"strategy", labeler::to_string(c.labels.strategy)},
                         {"sizes", c.labels.sizes},
                         {"subset_frac", c.labels.subset_frac},
                         {"max_iters", c.labels.max_iters}}},
                       {"encoder", c.encoder},
                       {"plan", plan},
                       {"train", c.train},
                       {"probe", c.probe},
                       {"tasks", tasks},
                       {"checkpoint_every", c.checkpoint_every},
                       {"output_dir", c.output_dir.string()}};
    if (c.corpus_path) {
        j["corpus_path"] = c.corpus_path->string();
    } else {
        j["corpus"] = c.corpus;
    }
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) {
            throw ConfigError("configuration must be a JSON object");
        }
        ExperimentConfig c;
        c.name = j.value("name", std::string{});
        c.seed = j.value("seed", c.seed);
        if (j.contains("corpus_path")) {
            c.corpus_path = j.at("corpus_path").get<std::string>();
        }
        c.corpus = section<synth::CorpusSpec>(j, "corpus");
        if (j.contains("labels")) {
            const auto& l = j.at("labels");
            c.labels.strategy = labeler::strategy_from_string(l.value("strategy", std::string("CA1")));
            c.labels.sizes = l.value("sizes", c.labels.sizes);
            c.labels.subset_frac = l.value("subset_frac", c.labels.subset_frac);
            c.labels.max_iters = l.value("max_iters", c.labels.max_iters);
        }
        c.encoder = section<encoder::EncoderConfig>(j, "encoder");
        if (!j.contains("encoder") || !j.at("encoder").contains("input_dim")) {
            c.encoder.input_dim = c.corpus.feature_dim;
        }
        if (j.contains("plan")) {
            const auto& p = j.at("plan");
            const auto mode = p.value("mode", std::string("single"));
            if (mode == "single") {
                c.plan.mode = objective::PlanMode::single;
            } else if (mode == "triple") {
                c.plan.mode = objective::PlanMode::triple;
            } else {
                throw ConfigError("plan.mode must be \"single\" or \"triple\", got \"" + mode + "\"");
            }
            c.plan.codebook_size = p.value("codebook_size", c.plan.codebook_size);
            c.plan.loc_big = p.value("loc_big", c.plan.loc_big);
        }
        c.train = section<pretrain::TrainConfig>(j, "train");
        c.probe = section<probe::ProbeConfig>(j, "probe");
        if (j.contains("tasks")) {
            c.tasks.clear();
            for (const auto& t : j.at("tasks")) {
                c.tasks.push_back(probe::task_from_string(t.get<std::string>()));
            }
        }
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.output_dir = j.value("output_dir", std::string{});
        c.apply_seed();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed configuration: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

std::string run_name(const ExperimentConfig& config) {
    std::string name = config.plan.mode == objective::PlanMode::single
                           ? "HuBERT_1"
                           : "HuBERT_3_" + format_loc(config.plan.loc_big);
    if (config.labels.strategy == labeler::Strategy::ca2) {
        name += "_stable";
    }
    return name;
}

objective::PlacementPlan build_plan(const ExperimentConfig& config) {
    if (config.plan.mode == objective::PlanMode::single) {
        return objective::plan_single(config.encoder.num_layers, config.plan.codebook_size);
    }
    return objective::plan_triple(config.plan.loc_big, config.encoder.num_layers, config.labels.sizes);
}

RunPaths run_paths(const ExperimentConfig& config) { return RunPaths{config.output_dir}; }

void write_config(const ExperimentConfig& config) {
    const auto paths = run_paths(config);
    std::filesystem::create_directories(paths.root);
    io::write_text_atomic(paths.config(), nlohmann::json(config).dump(2) + "\n");
}

synth::Corpus load_run_corpus(const ExperimentConfig& config) {
    const auto path = config.corpus_path ? *config.corpus_path : run_paths(config).corpus();
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("corpus file " + path.string() + " not found; run gen-data first");
    }
    auto corpus = synth::load_corpus(path);
    if (corpus.spec.feature_dim != config.encoder.input_dim) {
        throw std::runtime_error("corpus feature_dim " + std::to_string(corpus.spec.feature_dim) +
                                 " does not match encoder.input_dim " +
                                 std::to_string(config.encoder.input_dim));
    }
    return corpus;
}

synth::Corpus cmd_gen_data(const ExperimentConfig& config, const Progress& progress) {
    config.validate();
    write_config(config);
    if (config.corpus_path) {
        say(progress, "using existing corpus " + config.corpus_path->string());
        return load_run_corpus(config);
    }
    auto corpus = synth::generate_corpus(config.corpus);
    synth::save_corpus(corpus, run_paths(config).corpus());
    say(progress, "wrote " + run_paths(config).corpus().string() + " (" +
                      std::to_string(corpus.train.size()) + "/" + std::to_string(corpus.dev.size()) +
                      "/" + std::to_string(corpus.test.size()) + " utterances)");
    return corpus;
}

labeler::LabelBundle cmd_make_labels(const ExperimentConfig& config, const Progress& progress) {
    config.validate();
    write_config(config);
    const auto corpus = load_run_corpus(config);
    labeler::LabelOptions options;
    options.sizes = config.labels.sizes;
    options.subset_frac = config.labels.subset_frac;
    options.max_iters = config.labels.max_iters;
    options.seed = config.seed;
    auto bundle = labeler::build_labels(config.labels.strategy, corpus.train, options);
    labeler::save_label_bundle(bundle, run_paths(config).labels());
    say(progress, "wrote " + run_paths(config).labels().string());
    return bundle;
}

pretrain::TrainState cmd_pretrain(const ExperimentConfig& config, bool resume,
                                  const Progress& progress) {
    config.validate();
    write_config(config);
    const auto paths = run_paths(config);
    const auto corpus = load_run_corpus(config);
    if (!std::filesystem::exists(paths.labels())) {
        throw std::runtime_error("label file " + paths.labels().string() +
                                 " not found; run make-labels first");
    }
    const auto labels = labeler::load_label_bundle(paths.labels());

    pretrain::TrainState state;
    // Lines are kept without their terminators.
    const auto chomp = [](std::string line) {
        if (!line.empty() && line.back() == '\n') {
            line.pop_back();
        }
        return line;
    };
    std::vector<std::string> csv{chomp(pretrain::loss_csv_header(build_plan(config)))};
    if (resume && std::filesystem::exists(paths.checkpoint())) {
        state = pretrain::load_checkpoint(paths.checkpoint());
        if (nlohmann::json(state.config) != nlohmann::json(config.train)) {
            throw std::runtime_error("checkpoint was written by a different train config");
        }
        // Keep the log rows up to the checkpointed step.
        const auto old = read_lines(paths.loss_csv());
        for (std::size_t i = 1; i < old.size(); ++i) {
            if (!old[i].empty() && std::stoul(old[i].substr(0, old[i].find(','))) <= state.step) {
                csv.push_back(old[i]);
            }
        }
        say(progress, "resuming from step " + std::to_string(state.step));
    } else {
        state = pretrain::init_train_state(config.encoder, build_plan(config), config.train);
    }

    pretrain::Trainer trainer(corpus.train, labels, std::move(state));
    const std::size_t target = config.train.steps;
    const std::size_t chunk = config.checkpoint_every == 0 ? target : config.checkpoint_every;
    while (trainer.state().step < target) {
        const std::size_t next = std::min(target, (trainer.state().step / chunk + 1) * chunk);
        trainer.run_until(next, [&](const pretrain::LogRow& row) {
            csv.push_back(chomp(pretrain::loss_csv_row(row)));
        });
        pretrain::save_checkpoint(trainer.state(), paths.checkpoint());
        std::string text;
        for (const auto& line : csv) {
            text += line + "\n";
        }
        io::write_text_atomic(paths.loss_csv(), text);
        say(progress, "step " + std::to_string(trainer.state().step) + "/" + std::to_string(target));
    }
    return trainer.state();
}

std::vector<probe::ProbeResult> cmd_probe(const ExperimentConfig& config, const Progress& progress) {
    config.validate();
    write_config(config);
    const auto paths = run_paths(config);
    const auto corpus = load_run_corpus(config);
    if (!std::filesystem::exists(paths.checkpoint())) {
        throw std::runtime_error("checkpoint " + paths.checkpoint().string() +
                                 " not found; run pretrain first");
    }
    const auto state = pretrain::load_checkpoint(paths.checkpoint());
    std::filesystem::create_directories(paths.probes());
    std::vector<probe::ProbeResult> results;
    for (const auto kind : config.tasks) {
        const probe::ProbeTask task{kind, kind == probe::TaskKind::frame_content
                                              ? corpus.spec.num_content_units
                                              : corpus.spec.num_speakers};
        auto result = probe::train_probe(state.model, task, corpus, config.probe);
        io::write_text_atomic(paths.probe(kind), nlohmann::json(result).dump(2) + "\n");
        say(progress, probe::to_string(kind) + ": accuracy " + std::to_string(result.metric));
        results.push_back(std::move(result));
    }
    return results;
}

void cmd_run(const ExperimentConfig& config, const Progress& progress) {
    cmd_gen_data(config, progress);
    cmd_make_labels(config, progress);
    cmd_pretrain(config, false, progress);
    const auto results = cmd_probe(config, progress);
    std::vector<report::ReportRow> rows;
    for (const auto& r : results) {
        rows.push_back({probe::to_string(r.task), r});
    }
    report::write_report(rows, run_paths(config).report());
    say(progress, "wrote " + run_paths(config).report().string());
}

} // namespace mplbench::experiment
