#include "sdaut/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sdaut/tensor.hpp"

namespace sdaut {

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_pgm(const std::filesystem::path& path, const Tensor& image, double lo, double hi) {
    const Index h = image.dim(-2);
    const Index w = image.dim(-1);
    if (image.numel() != h * w) throw ShapeError("write_pgm expects a single-channel image");
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (double v : image.data()) {
        const double t = std::clamp((v - lo) / span, 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
    write_file_atomic(path, out);
}

Tensor read_pgm(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error(path.string() + ": not a binary PGM");
    auto next_int = [&]() {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
            in >> std::ws;
        }
        int v = 0;
        in >> v;
        return v;
    };
    const int w = next_int();
    const int h = next_int();
    const int maxval = next_int();
    in.get();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw std::runtime_error(path.string() + ": bad PGM header");
    std::vector<double> data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (auto& v : data) {
        const int c = in.get();
        if (c == EOF) throw std::runtime_error(path.string() + ": truncated PGM");
        v = static_cast<double>(c) / maxval;
    }
    return Tensor({1, h, w}, std::move(data));
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        parts.push_back(trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

std::string trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

KeyValueFile KeyValueFile::parse(std::string_view text) {
    KeyValueFile kv;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected `key = value`");
        }
        kv.set(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
    }
    return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) { return parse(read_file(path)); }

const std::string& KeyValueFile::get(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw std::runtime_error("missing key `" + key + "`");
    return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

void KeyValueFile::set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

std::string KeyValueFile::serialize() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

}  // namespace sdaut
