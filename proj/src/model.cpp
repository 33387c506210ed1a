#include "sdaut/model.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sdaut/ops.hpp"

namespace sdaut {

const std::array<const char*, kBlockCount> kBlockNames{"E1", "E2", "E3", "D3", "D2", "D1"};

int block_index(const std::string& name) {
    for (int i = 0; i < kBlockCount; ++i) {
        if (name == kBlockNames[i]) return i;
    }
    throw std::invalid_argument("unknown block '" + name + "' (expected E1 E2 E3 D3 D2 D1)");
}

void ModelConfig::validate() const {
    if (block_pattern.size() != kBlockCount) throw std::invalid_argument("block_pattern must have 6 letters");
    for (char c : block_pattern) {
        if (c != 'K' && c != 'D') throw std::invalid_argument("block_pattern letters must be K or D");
    }
    for (int i = 0; i < 3; ++i) {
        if (block_pattern[i] != block_pattern[5 - i]) {
            throw std::invalid_argument("block_pattern " + block_pattern + " is not encoder/decoder symmetric");
        }
    }
    if (patch_size < 1 || layers < 1 || window < 1 || downsample < 1 || mlp_ratio < 1) {
        throw std::invalid_argument("patch_size, layers, window, downsample and mlp_ratio must be positive");
    }
    const auto& c = channels;
    if (c[1] != 2 * c[0] || c[2] != 2 * c[1] || c[3] != 2 * c[2] || c[4] * 2 != c[3] || c[5] * 2 != c[4]) {
        throw std::invalid_argument("channels must follow C, 2C, 4C, 8C, 4C, 2C");
    }
    for (int i = 0; i < kBlockCount; ++i) block(i).validate();
    const Index m = required_multiple();
    if (height <= 0 || width <= 0 || height % m != 0 || width % m != 0) {
        throw ShapeError("input " + std::to_string(height) + "x" + std::to_string(width) +
                         " must be a positive multiple of " + std::to_string(m) + " (patch * 4 * window)");
    }
}

BlockConfig ModelConfig::block(int i) const {
    BlockConfig b;
    b.kind = block_pattern.at(static_cast<std::size_t>(i)) == 'D' ? BlockKind::dense : BlockKind::windowed;
    b.direction = i < 3 ? Resample::down : Resample::up;
    b.layers = layers;
    b.channels = channels[static_cast<std::size_t>(i)];
    b.heads = heads[static_cast<std::size_t>(i)];
    b.window = window;
    b.downsample = downsample;
    b.offsets = offsets_enabled;
    b.mlp_ratio = mlp_ratio;
    return b;
}

std::pair<Index, Index> ModelConfig::block_extent(int i) const {
    static constexpr Index kScale[kBlockCount] = {1, 2, 4, 8, 4, 2};
    const Index f = patch_size * kScale[i];
    return {height / f, width / f};
}

std::string ModelConfig::name() const {
    return block_pattern + (offsets_enabled ? "-O-" : "-NO-") + std::to_string(patch_size);
}

namespace {

template <std::size_t N>
std::string join(const std::array<Index, N>& v) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::array<Index, kBlockCount> parse_list(const std::string& key, const std::string& text) {
    const auto parts = split(text, ',');
    if (parts.size() != kBlockCount) throw std::invalid_argument(key + " needs 6 comma-separated integers");
    std::array<Index, kBlockCount> out{};
    for (int i = 0; i < kBlockCount; ++i) out[static_cast<std::size_t>(i)] = std::stoll(trim(parts[i]));
    return out;
}

bool parse_bool(const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw std::invalid_argument("not a boolean: " + text);
}

}  // namespace

KeyValueFile ModelConfig::to_kv() const {
    KeyValueFile kv;
    kv.set("patch_size", std::to_string(patch_size));
    kv.set("block_pattern", block_pattern);
    kv.set("offsets_enabled", offsets_enabled ? "true" : "false");
    kv.set("layers", std::to_string(layers));
    kv.set("window", std::to_string(window));
    kv.set("downsample", std::to_string(downsample));
    kv.set("channels", join(channels));
    kv.set("heads", join(heads));
    kv.set("height", std::to_string(height));
    kv.set("width", std::to_string(width));
    kv.set("mlp_ratio", std::to_string(mlp_ratio));
    return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValueFile& kv) {
    ModelConfig c;
    if (kv.contains("preset")) c = kv.get("preset") == "tiny" ? tiny_config() : preset(kv.get("preset"));
    if (kv.contains("patch_size")) c.patch_size = std::stoll(kv.get("patch_size"));
    if (kv.contains("block_pattern")) c.block_pattern = kv.get("block_pattern");
    if (kv.contains("offsets_enabled")) c.offsets_enabled = parse_bool(kv.get("offsets_enabled"));
    if (kv.contains("layers")) c.layers = std::stoll(kv.get("layers"));
    if (kv.contains("window")) c.window = std::stoll(kv.get("window"));
    if (kv.contains("downsample")) c.downsample = std::stoll(kv.get("downsample"));
    if (kv.contains("channels")) c.channels = parse_list("channels", kv.get("channels"));
    if (kv.contains("heads")) c.heads = parse_list("heads", kv.get("heads"));
    if (kv.contains("height")) c.height = std::stoll(kv.get("height"));
    if (kv.contains("width")) c.width = std::stoll(kv.get("width"));
    if (kv.contains("mlp_ratio")) c.mlp_ratio = std::stoll(kv.get("mlp_ratio"));
    c.validate();
    return c;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const char* pattern : {"KKDDKK", "KKKKKK"})
        for (const char* off : {"O", "NO"})
            for (int s : {1, 2, 4}) names.push_back(std::string(pattern) + "-" + off + "-" + std::to_string(s));
    return names;
}

ModelConfig preset(const std::string& name) {
    const auto parts = split(name, '-');
    if (parts.size() != 3 || (parts[0] != "KKDDKK" && parts[0] != "KKKKKK") || (parts[1] != "O" && parts[1] != "NO") ||
        (parts[2] != "1" && parts[2] != "2" && parts[2] != "4")) {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    ModelConfig c;
    c.block_pattern = parts[0];
    c.offsets_enabled = parts[1] == "O";
    c.patch_size = std::stoll(parts[2]);
    return c;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.layers = 2;
    c.channels = {8, 16, 32, 64, 32, 16};
    c.heads = {2, 2, 4, 4, 4, 2};
    c.height = 64;
    c.width = 64;
    return c;
}

ParamList SdautParams::named() const {
    ParamList out;
    out.emplace_back("im.w", im_w);
    out.emplace_back("im.b", im_b);
    for (int i = 0; i < kBlockCount; ++i) blocks[i].collect(std::string(kBlockNames[i]) + ".", out);
    fuse[0].collect("fuse_D2.", out);
    fuse[1].collect("fuse_D1.", out);
    out.emplace_back("final.w", final_w);
    out.emplace_back("final.b", final_b);
    out.emplace_back("om.w1", om_w1);
    out.emplace_back("om.b1", om_b1);
    out.emplace_back("om.w2", om_w2);
    out.emplace_back("om.b2", om_b2);
    return out;
}

SdautParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const Index c1 = cfg.channels[0], s = cfg.patch_size;
    SdautParams p;
    p.im_w = init::fan_in_uniform({c1, 1, s, s}, s * s, rng);
    p.im_b = init::zeros({c1});
    for (int i = 0; i < kBlockCount; ++i) {
        const auto [h, w] = cfg.block_extent(i);
        p.blocks[i] = BlockParams::init(cfg.block(i), h, w, rng);
    }
    p.fuse[0] = FuseParams::init(cfg.channels[4], rng);
    p.fuse[1] = FuseParams::init(cfg.channels[5], rng);
    p.final_w = init::fan_in_uniform({c1, c1, 3, 3}, 9 * c1, rng);
    p.final_b = init::zeros({c1});
    p.om_w1 = init::fan_in_uniform({s * s * c1, c1, 1, 1}, c1, rng);
    p.om_b1 = init::zeros({s * s * c1});
    p.om_w2 = init::zeros({1, c1, 3, 3});
    p.om_b2 = init::zeros({1});
    round_to_precision(p.named());
    return p;
}

Tensor input_module(const SdautParams& p, const Tensor& x_u, Index s) {
    if (x_u.rank() != 3 || x_u.dim(0) != 1) throw ShapeError("input_module expects [1,h,w], got " + to_string(x_u.shape()));
    const Index h = x_u.dim(1), w = x_u.dim(2);
    Tensor f = ops::conv2d(ops::reshape(x_u, {1, 1, h, w}), p.im_w, p.im_b, s, 0);
    const Index c = f.dim(1);
    return ops::permute(ops::reshape(f, {c, f.dim(2), f.dim(3)}), {1, 2, 0});
}

Tensor output_module(const SdautParams& p, const Tensor& f, Index s) {
    const Index h = f.dim(0), w = f.dim(1), c = f.dim(2);
    Tensor t = ops::reshape(ops::permute(f, {2, 0, 1}), {1, c, h, w});
    t = ops::conv2d(t, p.om_w1, p.om_b1, 1, 0);
    if (s > 1) t = ops::pixel_shuffle(t, s);
    t = ops::conv2d(t, p.om_w2, p.om_b2, 1, 1);
    return ops::reshape(t, {1, h * s, w * s});
}

Tensor sdaut_forward(const ModelConfig& cfg, const SdautParams& p, const Tensor& x_u, ForwardCapture* capture) {
    if (x_u.rank() != 3 || x_u.dim(0) != 1) throw ShapeError("sdaut expects [1,h,w], got " + to_string(x_u.shape()));
    const Index m = cfg.required_multiple();
    if (x_u.dim(1) % m != 0 || x_u.dim(2) % m != 0) {
        throw ShapeError("input " + to_string(x_u.shape()) + ": extents must be multiples of " + std::to_string(m));
    }
    auto run = [&](int i, const Tensor& x) {
        std::vector<DeformCapture>* layers = capture && capture->block == i ? &capture->layers : nullptr;
        return rsdtb_forward(cfg.block(i), p.blocks[i], x, layers);
    };
    const Tensor f_im = input_module(p, x_u, cfg.patch_size);
    const Tensor e1 = run(0, f_im);
    const Tensor e2 = run(1, e1);
    const Tensor e3 = run(2, e2);
    const Tensor d3 = run(3, e3);
    const Tensor d2 = run(4, skip_fuse(p.fuse[0], d3, e2));
    const Tensor d1 = run(5, skip_fuse(p.fuse[1], d2, e1));
    const Tensor f = ops::add(conv3x3_hwc(d1, p.final_w, p.final_b), f_im);
    return ops::add(output_module(p, f, cfg.patch_size), x_u);
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const SdautParams& p) {
    std::ostringstream blob(std::ios::binary);
    std::string manifest;
    for (const auto& [name, t] : p.named()) {
        const auto offset = static_cast<std::uint64_t>(blob.tellp());
        write_tensor(blob, t);
        std::string shape;
        for (std::size_t i = 0; i < t.shape().size(); ++i) shape += (i ? "x" : "") + std::to_string(t.shape()[i]);
        manifest += name + " " + shape + " " + std::to_string(offset) + "\n";
    }
    write_file_atomic(path, blob.str());
    write_file_atomic(path.string() + ".manifest", manifest);
    write_file_atomic(path.string() + ".config", cfg.to_kv().serialize());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Checkpoint ck;
    ck.config = ModelConfig::from_kv(KeyValueFile::load(path.string() + ".config"));
    ck.params = init_params(ck.config, 0);
    std::istringstream blob(read_file(path), std::ios::binary);
    blob.seekg(0, std::ios::end);
    const auto blob_size = static_cast<std::uint64_t>(blob.tellg());
    std::map<std::string, std::uint64_t> offsets;
    std::istringstream manifest(read_file(path.string() + ".manifest"));
    std::string name, shape;
    std::uint64_t offset = 0;
    while (manifest >> name >> shape >> offset) {
        if (!offsets.emplace(name, offset).second) throw std::runtime_error("checkpoint: duplicate entry " + name);
    }
    const ParamList named = ck.params.named();
    if (offsets.size() != named.size()) {
        throw std::runtime_error("checkpoint: manifest has " + std::to_string(offsets.size()) + " entries, model needs " +
                                 std::to_string(named.size()));
    }
    for (const auto& [pname, t] : named) {
        const auto it = offsets.find(pname);
        if (it == offsets.end()) throw std::runtime_error("checkpoint: missing " + pname);
        if (it->second >= blob_size) throw std::runtime_error("checkpoint: offset out of range for " + pname);
        blob.seekg(static_cast<std::streamoff>(it->second));
        const Tensor loaded = read_tensor(blob);
        if (loaded.shape() != t.shape()) {
            throw std::runtime_error("checkpoint: " + pname + " has shape " + to_string(loaded.shape()) + ", expected " +
                                     to_string(t.shape()));
        }
        Tensor dst = t;
        std::copy(loaded.data().begin(), loaded.data().end(), dst.mutable_data().begin());
    }
    return ck;
}

}  // namespace sdaut
