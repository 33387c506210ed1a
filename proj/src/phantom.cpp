#include "sdaut/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "sdaut/io.hpp"

namespace sdaut {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

}  // namespace

Tensor render_ellipses(const std::vector<Ellipse>& ellipses, Index extent) {
    Tensor out = Tensor::zeros({1, extent, extent});
    auto d = out.mutable_data();
    for (Index r = 0; r < extent; ++r) {
        const double y = 1.0 - (2.0 * r + 1.0) / extent;
        for (Index c = 0; c < extent; ++c) {
            const double x = (2.0 * c + 1.0) / extent - 1.0;
            double v = 0.0;
            for (const auto& e : ellipses) {
                const double co = std::cos(e.angle), si = std::sin(e.angle);
                const double u = (x - e.cx) * co + (y - e.cy) * si;
                const double w = -(x - e.cx) * si + (y - e.cy) * co;
                if ((u * u) / (e.ax * e.ax) + (w * w) / (e.ay * e.ay) <= 1.0) v += e.value;
            }
            d[r * extent + c] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

std::vector<Phantom> phantom_gen(std::uint64_t seed, Index n, Index extent) {
    if (n < 0 || extent <= 0) throw std::invalid_argument("phantom_gen: n must be >= 0 and extent > 0");
    std::mt19937_64 rng(seed);
    std::vector<Phantom> out;
    for (Index i = 0; i < n; ++i) {
        Phantom p;
        p.extent = extent;
        const double ay = uniform(rng, 0.78, 0.92), ax = uniform(rng, 0.62, 0.74);
        const double tilt = uniform(rng, -0.15, 0.15);
        p.ellipses.push_back({0.0, 0.0, ay, ax, tilt, 0.9});
        p.ellipses.push_back({0.0, 0.0, ay - 0.06, ax - 0.05, tilt, -0.7});
        const int features = std::uniform_int_distribution<int>(6, 12)(rng);
        for (int k = 0; k < features; ++k) {
            Ellipse e;
            e.cy = uniform(rng, -0.55, 0.55) * ay;
            e.cx = uniform(rng, -0.55, 0.55) * ax;
            e.ay = uniform(rng, 0.05, 0.3);
            e.ax = uniform(rng, 0.05, 0.3);
            e.angle = uniform(rng, 0.0, std::acos(-1.0));
            e.value = uniform(rng, -0.15, 0.45);
            p.ellipses.push_back(e);
        }
        p.image = render_ellipses(p.ellipses, extent);
        out.push_back(std::move(p));
    }
    return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Phantom>& phantoms) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < phantoms.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "phantom_%04zu", i);
        save_tensor(dir / (std::string(stem) + ".dtns"), phantoms[i].image);
        write_pgm(dir / (std::string(stem) + ".pgm"), phantoms[i].image);
    }
}

std::vector<Tensor> load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".dtns") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Tensor> out;
    for (const auto& f : files) out.push_back(load_tensor(f));
    return out;
}

}  // namespace sdaut
