#include "sdaut/macs.hpp"

#include <cstdio>
#include <sstream>

#include "sdaut/attention.hpp"

namespace sdaut {

namespace {

using u64 = std::uint64_t;

u64 u(Index v) { return static_cast<u64>(v); }

class Counter {
public:
    explicit Counter(MacsReport& r) : report_(r) {}
    void add(std::string name, u64 macs) {
        report_.entries.push_back({std::move(name), macs});
        report_.total += macs;
    }

private:
    MacsReport& report_;
};

void count_layer(Counter& out, const std::string& prefix, const AttentionConfig& a, Index h, Index w, Index mlp_ratio) {
    const WindowGeometry geo = resolve_window(a, h, w);
    const u64 n = u(h * w), c = u(a.channels);
    const u64 keys_per_window = u(geo.keys());
    const u64 sampled = u(geo.count()) * keys_per_window;
    out.add(prefix + "q_proj", n * c * c);
    out.add(prefix + "kv_proj", 2 * sampled * c * c);
    out.add(prefix + "scores", n * keys_per_window * c);
    out.add(prefix + "context", n * keys_per_window * c);
    out.add(prefix + "o_proj", n * c * c);
    if (a.offsets) {
        out.add(prefix + "offset_dw", sampled * u(kOffsetKernel * kOffsetKernel) * c);
        out.add(prefix + "offset_pw", sampled * 2 * c);
    }
    if (a.offsets || a.downsample > 1) out.add(prefix + "sampling", sampled * 4 * c);
    out.add(prefix + "mlp", 2 * n * c * c * u(mlp_ratio));
}

}  // namespace

MacsReport macs_estimate(const ModelConfig& cfg, Index height, Index width) {
    cfg.validate();
    const Index m = cfg.required_multiple();
    if (height <= 0 || width <= 0 || height % m != 0 || width % m != 0) {
        throw ShapeError("macs: extent " + std::to_string(height) + "x" + std::to_string(width) + " is not a multiple of " +
                         std::to_string(m));
    }
    MacsReport r;
    r.preset = cfg.name();
    r.height = height;
    r.width = width;
    Counter out(r);
    const Index s = cfg.patch_size;
    const u64 c1 = u(cfg.channels[0]);
    const u64 n0 = u((height / s) * (width / s));
    out.add("input_module", u(s * s) * c1 * n0);

    Index h = height / s, w = width / s;
    for (int b = 0; b < kBlockCount; ++b) {
        const BlockConfig bc = cfg.block(b);
        const std::string name = kBlockNames[b];
        if (b == 4 || b == 5) {
            const u64 cf = u(bc.channels);
            out.add(name + ".fuse", u(h * w) * 2 * cf * cf);
        }
        for (Index l = 0; l < bc.layers; ++l) {
            count_layer(out, name + ".L" + std::to_string(l) + ".", bc.layer_attention(l), h, w, bc.mlp_ratio);
        }
        const u64 c = u(bc.channels);
        // Resampling runs on both the transformer path and the shortcut.
        if (bc.direction == Resample::down) {
            out.add(name + ".merge", 2 * (u(h * w) / 4) * (4 * c) * (2 * c));
            h /= 2;
            w /= 2;
        } else {
            out.add(name + ".expand", 2 * u(h * w) * c * (2 * c));
            h *= 2;
            w *= 2;
        }
        const u64 co = u(bc.out_channels());
        out.add(name + ".conv", 9 * co * co * u(h * w));
    }
    out.add("final_conv", 9 * c1 * c1 * n0);
    out.add("output_module.expand", n0 * c1 * u(s * s) * c1);
    out.add("output_module.conv", 9 * c1 * u(height * width));
    return r;
}

std::string MacsReport::table() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %18s %10s\n", "layer", "MACs", "G");
    os << line;
    for (const auto& e : entries) {
        std::snprintf(line, sizeof line, "%-28s %18llu %10.4f\n", e.name.c_str(), static_cast<unsigned long long>(e.macs),
                      static_cast<double>(e.macs) * 1e-9);
        os << line;
    }
    std::snprintf(line, sizeof line, "%-28s %18llu %10.4f\n", "total", static_cast<unsigned long long>(total), giga());
    os << line;
    return os.str();
}

KeyValueFile MacsReport::to_kv() const {
    KeyValueFile kv;
    kv.set("preset", preset);
    kv.set("height", std::to_string(height));
    kv.set("width", std::to_string(width));
    kv.set("total_macs", std::to_string(total));
    char g[32];
    std::snprintf(g, sizeof g, "%.4f", giga());
    kv.set("total_gmacs", g);
    for (const auto& e : entries) kv.set("layer." + e.name, std::to_string(e.macs));
    return kv;
}

}  // namespace sdaut
