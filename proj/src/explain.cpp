#include "sdaut/explain.hpp"

#include <algorithm>
#include <cmath>

#include "sdaut/autodiff.hpp"
#include "sdaut/io.hpp"

namespace sdaut {

namespace {

Index wrap(Index v, Index n) { return ((v % n) + n) % n; }

const char* const kCaptureParts[] = {"reference", "offsets", "deformed", "attention"};

std::string file_of(const std::string& stem, const char* part) { return stem + "." + part + ".dtns"; }

}  // namespace

void save_capture(const std::filesystem::path& dir, const std::string& stem, const DeformCapture& c) {
    std::filesystem::create_directories(dir);
    const Tensor* parts[] = {&c.reference, &c.offsets, &c.deformed, &c.attention};
    for (int i = 0; i < 4; ++i) save_tensor(dir / file_of(stem, kCaptureParts[i]), *parts[i]);
    KeyValueFile kv;
    const auto& g = c.geometry;
    kv.set("height", std::to_string(g.height));
    kv.set("width", std::to_string(g.width));
    kv.set("rows", std::to_string(g.rows));
    kv.set("cols", std::to_string(g.cols));
    kv.set("shift", std::to_string(g.shift));
    kv.set("downsample", std::to_string(g.downsample));
    write_file_atomic(dir / (stem + ".geometry"), kv.serialize());
}

DeformCapture load_capture(const std::filesystem::path& dir, const std::string& stem) {
    DeformCapture c;
    Tensor* parts[] = {&c.reference, &c.offsets, &c.deformed, &c.attention};
    for (int i = 0; i < 4; ++i) *parts[i] = load_tensor(dir / file_of(stem, kCaptureParts[i]));
    const auto kv = KeyValueFile::load(dir / (stem + ".geometry"));
    auto& g = c.geometry;
    g.height = std::stoll(kv.get("height"));
    g.width = std::stoll(kv.get("width"));
    g.rows = std::stoll(kv.get("rows"));
    g.cols = std::stoll(kv.get("cols"));
    g.shift = std::stoll(kv.get("shift"));
    g.downsample = std::stoll(kv.get("downsample"));
    return c;
}

std::pair<double, double> window_to_map(const WindowGeometry& g, Index win, double row, double col, Index map_h,
                                        Index map_w) {
    const double r = static_cast<double>((win / g.cols) * g.height) + row + static_cast<double>(g.shift);
    const double c = static_cast<double>((win % g.cols) * g.width) + col + static_cast<double>(g.shift);
    return {std::fmod(r, static_cast<double>(map_h)), std::fmod(c, static_cast<double>(map_w))};
}

Tensor deformation_field(const DeformCapture& c, Index map_h, Index map_w, Index out_h, Index out_w) {
    const auto& g = c.geometry;
    const Index r = g.downsample, kw = g.width / r, np = g.keys();
    if (c.offsets.dim(0) != g.count() || c.offsets.dim(1) != np) throw ShapeError("deformation_field: capture shape");
    std::vector<double> map(static_cast<std::size_t>(map_h * map_w), 0.0);
    const auto off = c.offsets.data();
    for (Index win = 0; win < g.count(); ++win) {
        const Index oy = (win / g.cols) * g.height + g.shift, ox = (win % g.cols) * g.width + g.shift;
        for (Index k = 0; k < np; ++k) {
            const double dy = off[(win * np + k) * 2], dx = off[(win * np + k) * 2 + 1];
            const double mag = std::sqrt(dy * dy + dx * dx);
            const Index ky = (k / kw) * r, kx = (k % kw) * r;
            for (Index a = 0; a < r; ++a) {
                for (Index b = 0; b < r; ++b) map[wrap(oy + ky + a, map_h) * map_w + wrap(ox + kx + b, map_w)] = mag;
            }
        }
    }
    Tensor out = Tensor::zeros({1, out_h, out_w});
    auto d = out.mutable_data();
    for (Index y = 0; y < out_h; ++y) {
        const Index sy = std::min(map_h - 1, y * map_h / out_h);
        for (Index x = 0; x < out_w; ++x) d[y * out_w + x] = map[sy * map_w + std::min(map_w - 1, x * map_w / out_w)];
    }
    return out;
}

Tensor deformed_point_overlay(const DeformCapture& c, const Tensor& image, Index map_h, Index map_w) {
    const auto& g = c.geometry;
    const Index h = image.dim(-2), w = image.dim(-1), np = g.keys();
    Tensor out = Tensor({1, h, w}, std::vector<double>(image.data().begin(), image.data().end()));
    auto d = out.mutable_data();
    const auto pts = c.deformed.data();
    const double sy = static_cast<double>(h) / map_h, sx = static_cast<double>(w) / map_w;
    for (Index win = 0; win < g.count(); ++win) {
        for (Index k = 0; k < np; ++k) {
            const double py = std::clamp(pts[(win * np + k) * 2], 0.0, static_cast<double>(g.height - 1));
            const double px = std::clamp(pts[(win * np + k) * 2 + 1], 0.0, static_cast<double>(g.width - 1));
            const auto [my, mx] = window_to_map(g, win, py, px, map_h, map_w);
            const Index iy = std::clamp<Index>(std::lround((my + 0.5) * sy - 0.5), 0, h - 1);
            const Index ix = std::clamp<Index>(std::lround((mx + 0.5) * sx - 0.5), 0, w - 1);
            d[iy * w + ix] = 1.0;
        }
    }
    return out;
}

DeformationExport capture_deformation(const ModelConfig& cfg, const SdautParams& p, const Tensor& x_u, int block,
                                      const std::filesystem::path& out_dir) {
    if (block < 0 || block >= kBlockCount) throw std::invalid_argument("capture_deformation: block index out of range");
    if (x_u.rank() != 3 || x_u.dim(1) != cfg.height || x_u.dim(2) != cfg.width) {
        throw ShapeError("capture_deformation: input " + to_string(x_u.shape()) + " does not match the configured " +
                         std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
    ForwardCapture cap;
    cap.block = block;
    {
        NoGradScope no_grad;
        sdaut_forward(cfg, p, x_u, &cap);
    }
    DeformationExport ex;
    ex.block = block;
    ex.layers = std::move(cap.layers);
    const auto [map_h, map_w] = cfg.block_extent(block);
    const Index h = x_u.dim(1), w = x_u.dim(2);
    std::string index;
    for (std::size_t l = 0; l < ex.layers.size(); ++l) {
        ex.fields.push_back(deformation_field(ex.layers[l], map_h, map_w, h, w));
        if (out_dir.empty()) continue;
        const std::string stem = std::string(kBlockNames[block]) + "_L" + std::to_string(l);
        save_capture(out_dir, stem, ex.layers[l]);
        save_tensor(out_dir / (stem + ".field.dtns"), ex.fields.back());
        const double a = ex.layers[l].geometry.offset_scale() * std::sqrt(2.0);
        write_pgm(out_dir / (stem + ".field.pgm"), ex.fields.back(), 0.0, a);
        write_pgm(out_dir / (stem + ".overlay.pgm"), deformed_point_overlay(ex.layers[l], x_u, map_h, map_w));
        index += stem + " block=" + kBlockNames[block] + " layer=" + std::to_string(l) + "\n";
    }
    if (!out_dir.empty()) write_file_atomic(out_dir / "captures.index", index);
    return ex;
}

void HeatmapRequest::validate(const ModelConfig& cfg) const {
    if (block < 0 || block >= kBlockCount) throw std::invalid_argument("heatmap: block index out of range");
    if (layer < 0 || layer >= cfg.layers) throw std::invalid_argument("heatmap: layer out of range");
    if (head < 0 || head >= cfg.heads[block]) throw std::invalid_argument("heatmap: head out of range");
    const auto [h, w] = cfg.block_extent(block);
    if (row < 0 || row >= h || col < 0 || col >= w) {
        throw std::invalid_argument("heatmap: query outside the " + std::to_string(h) + "x" + std::to_string(w) + " map");
    }
}

Heatmap attention_heatmap(const ModelConfig& cfg, const DeformCapture& c, const HeatmapRequest& req) {
    req.validate(cfg);
    const auto [h, w] = cfg.block_extent(req.block);
    const auto& g = c.geometry;
    const Index nh = cfg.heads[req.block], nq = g.queries(), np = g.keys();
    const Index sr = wrap(req.row - g.shift, h), sc = wrap(req.col - g.shift, w);
    const Index win = (sr / g.height) * g.cols + sc / g.width;
    const Index q = (sr % g.height) * g.width + sc % g.width;
    const auto attn = c.attention.data();
    const auto pts = c.deformed.data();
    const double* row = attn.data() + ((win * nh + req.head) * nq + q) * np;

    Heatmap hm;
    hm.weights = Tensor::zeros({1, h, w});
    auto out = hm.weights.mutable_data();
    const Index oy = (win / g.cols) * g.height + g.shift, ox = (win % g.cols) * g.width + g.shift;
    for (Index k = 0; k < np; ++k) {
        const double py = std::clamp(pts[(win * np + k) * 2], 0.0, static_cast<double>(g.height - 1));
        const double px = std::clamp(pts[(win * np + k) * 2 + 1], 0.0, static_cast<double>(g.width - 1));
        const Index y0 = static_cast<Index>(std::floor(py)), x0 = static_cast<Index>(std::floor(px));
        const double fy = py - y0, fx = px - x0;
        const Index y1 = std::min(y0 + 1, g.height - 1), x1 = std::min(x0 + 1, g.width - 1);
        auto put = [&](Index y, Index x, double wgt) {
            if (wgt != 0.0) out[wrap(oy + y, h) * w + wrap(ox + x, w)] += row[k] * wgt;
        };
        put(y0, x0, (1 - fy) * (1 - fx));
        put(y0, x1, (1 - fy) * fx);
        put(y1, x0, fy * (1 - fx));
        put(y1, x1, fy * fx);
    }
    const double peak = *std::max_element(out.begin(), out.end());
    hm.image = Tensor::zeros({1, h, w});
    auto img = hm.image.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) img[i] = peak > 0 ? 255.0 * out[i] / peak : 0.0;
    return hm;
}

Heatmap attention_heatmap(const ModelConfig& cfg, const SdautParams& p, const Tensor& x_u, const HeatmapRequest& req) {
    req.validate(cfg);
    const auto ex = capture_deformation(cfg, p, x_u, req.block, {});
    return attention_heatmap(cfg, ex.layers.at(static_cast<std::size_t>(req.layer)), req);
}

}  // namespace sdaut
