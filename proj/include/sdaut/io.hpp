#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sdaut {

class Tensor;

/// Writes via a sibling temp file and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// 8-bit binary PGM (P5). Values are clamped to [lo, hi] and mapped to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor& image, double lo = 0.0, double hi = 1.0);
/// Reads a P5 PGM into a [1,H,W] tensor scaled to [0,1].
Tensor read_pgm(const std::filesystem::path& path);

/// Plain-text `key = value` file. '#' starts a comment; blank lines ignored.
class KeyValueFile {
public:
    static KeyValueFile parse(std::string_view text);
    static KeyValueFile load(const std::filesystem::path& path);

    bool contains(const std::string& key) const { return entries_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    void set(const std::string& key, std::string value);
    const std::map<std::string, std::string>& entries() const { return entries_; }
    std::string serialize() const;

private:
    std::map<std::string, std::string> entries_;
};

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

}  // namespace sdaut
