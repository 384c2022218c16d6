#pragma once

// Binary container shared by the corpus (MPLD), label bundle (MPLB) and
// checkpoint (MPLC) files.
//
// Layout, all integers little-endian:
//   magic          4 bytes
//   version        u8
//   manifest_len   u64, then manifest_len bytes of UTF-8 JSON
//   entry_count    u32, then per entry:
//                    name_len u32, name bytes, offset u64, length u64
//   payload        concatenated blocks; offsets are relative to its start
//
// Blocks hold either little-endian f64 arrays or u32 arrays; the manifest
// records what each name means.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace mplbench::io {

using Magic = std::array<char, 4>;

class ContainerWriter {
public:
    ContainerWriter(Magic magic, std::uint8_t version) : magic_(magic), version_(version) {}

    void set_manifest(nlohmann::json manifest) { manifest_ = std::move(manifest); }
    void add_f64(const std::string& name, std::span<const double> values);
    void add_u32(const std::string& name, std::span<const std::uint32_t> values);

    std::vector<std::uint8_t> serialize() const;
    void write_file(const std::filesystem::path& path) const;

private:
    void add_block(const std::string& name, std::vector<std::uint8_t> bytes);

    Magic magic_;
    std::uint8_t version_;
    nlohmann::json manifest_ = nlohmann::json::object();
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> blocks_;
};

class ContainerReader {
public:
    // Validates magic, version, and every table entry before returning;
    // throws std::runtime_error on any malformed or truncated input.
    static ContainerReader parse(std::span<const std::uint8_t> bytes, Magic magic,
                                 std::uint8_t version);
    static ContainerReader read_file(const std::filesystem::path& path, Magic magic,
                                     std::uint8_t version);

    const nlohmann::json& manifest() const { return manifest_; }
    bool contains(const std::string& name) const { return blocks_.count(name) != 0; }
    std::vector<double> f64(const std::string& name) const;
    std::vector<std::uint32_t> u32(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    const std::vector<std::uint8_t>& block(const std::string& name) const;

    nlohmann::json manifest_;
    std::map<std::string, std::vector<std::uint8_t>> blocks_;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

} // namespace mplbench::io
