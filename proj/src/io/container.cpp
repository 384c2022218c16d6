#include "mplbench/io/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace mplbench::io {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (n > bytes_.size() - pos_) {
            throw std::runtime_error(std::string("container: truncated while reading ") + what);
        }
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::uint64_t u64(const char* what) {
        const auto b = take(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        }
        return v;
    }

    std::uint32_t u32(const char* what) {
        const auto b = take(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        }
        return v;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::string magic_string(std::span<const std::uint8_t> m) {
    std::string s;
    for (const auto c : m) {
        s.push_back(static_cast<char>(c));
    }
    return s;
}

} // namespace

void ContainerWriter::add_block(const std::string& name, std::vector<std::uint8_t> bytes) {
    for (const auto& [existing, _] : blocks_) {
        if (existing == name) {
            throw std::invalid_argument("container: duplicate block name '" + name + "'");
        }
    }
    blocks_.emplace_back(name, std::move(bytes));
}

void ContainerWriter::add_f64(const std::string& name, std::span<const double> values) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(values.size() * 8);
    for (const double v : values) {
        put_u64(bytes, std::bit_cast<std::uint64_t>(v));
    }
    add_block(name, std::move(bytes));
}

void ContainerWriter::add_u32(const std::string& name, std::span<const std::uint32_t> values) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(values.size() * 4);
    for (const auto v : values) {
        put_u32(bytes, v);
    }
    add_block(name, std::move(bytes));
}

std::vector<std::uint8_t> ContainerWriter::serialize() const {
    std::vector<std::uint8_t> out(magic_.begin(), magic_.end());
    out.push_back(version_);
    const std::string manifest = manifest_.dump();
    put_u64(out, manifest.size());
    out.insert(out.end(), manifest.begin(), manifest.end());
    put_u32(out, static_cast<std::uint32_t>(blocks_.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, bytes] : blocks_) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u64(out, offset);
        put_u64(out, bytes.size());
        offset += bytes.size();
    }
    for (const auto& [name, bytes] : blocks_) {
        out.insert(out.end(), bytes.begin(), bytes.end());
    }
    return out;
}

void ContainerWriter::write_file(const std::filesystem::path& path) const {
    write_file_atomic(path, serialize());
}

ContainerReader ContainerReader::parse(std::span<const std::uint8_t> bytes, Magic magic,
                                       std::uint8_t version) {
    Cursor cur(bytes);
    const auto found_magic = cur.take(4, "magic");
    const std::string expected_magic(magic.begin(), magic.end());
    if (magic_string(found_magic) != expected_magic) {
        throw std::runtime_error("container: bad magic, expected '" + expected_magic +
                                 "', found '" + magic_string(found_magic) + "'");
    }
    const auto found_version = cur.take(1, "version")[0];
    if (found_version != version) {
        throw std::runtime_error("container: version mismatch, expected " +
                                 std::to_string(version) + ", found " +
                                 std::to_string(found_version));
    }
    const auto manifest_len = cur.u64("manifest length");
    const auto manifest_bytes = cur.take(manifest_len, "manifest");

    ContainerReader reader;
    try {
        reader.manifest_ = nlohmann::json::parse(manifest_bytes.begin(), manifest_bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("container: malformed manifest: ") + e.what());
    }

    struct Entry {
        std::string name;
        std::uint64_t offset;
        std::uint64_t length;
    };
    const auto count = cur.u32("entry count");
    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = cur.u32("entry name length");
        const auto name = cur.take(name_len, "entry name");
        Entry e{magic_string(name), cur.u64("entry offset"), cur.u64("entry length")};
        entries.push_back(std::move(e));
    }
    const std::size_t payload_start = cur.position();
    const std::size_t payload_size = cur.remaining();
    for (const auto& e : entries) {
        if (e.offset > payload_size || e.length > payload_size - e.offset) {
            throw std::runtime_error("container: truncated block '" + e.name + "'");
        }
        const auto* first = bytes.data() + payload_start + e.offset;
        if (!reader.blocks_.emplace(e.name, std::vector<std::uint8_t>(first, first + e.length))
                 .second) {
            throw std::runtime_error("container: duplicate block '" + e.name + "'");
        }
    }
    return reader;
}

ContainerReader ContainerReader::read_file(const std::filesystem::path& path, Magic magic,
                                           std::uint8_t version) {
    const auto bytes = read_bytes(path);
    return parse(bytes, magic, version);
}

const std::vector<std::uint8_t>& ContainerReader::block(const std::string& name) const {
    const auto it = blocks_.find(name);
    if (it == blocks_.end()) {
        throw std::runtime_error("container: missing block '" + name + "'");
    }
    return it->second;
}

std::vector<double> ContainerReader::f64(const std::string& name) const {
    const auto& b = block(name);
    if (b.size() % 8 != 0) {
        throw std::runtime_error("container: block '" + name + "' is not an f64 array");
    }
    std::vector<double> out(b.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k) {
            v |= static_cast<std::uint64_t>(b[i * 8 + k]) << (8 * k);
        }
        out[i] = std::bit_cast<double>(v);
    }
    return out;
}

std::vector<std::uint32_t> ContainerReader::u32(const std::string& name) const {
    const auto& b = block(name);
    if (b.size() % 4 != 0) {
        throw std::runtime_error("container: block '" + name + "' is not a u32 array");
    }
    std::vector<std::uint32_t> out(b.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            v |= static_cast<std::uint32_t>(b[i * 4 + k]) << (8 * k);
        }
        out[i] = v;
    }
    return out;
}

std::vector<std::string> ContainerReader::names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : blocks_) {
        out.push_back(name);
    }
    return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw std::runtime_error("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                      text.size()));
}

} // namespace mplbench::io
