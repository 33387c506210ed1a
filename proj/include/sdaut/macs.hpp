#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdaut/io.hpp"
#include "sdaut/model.hpp"

namespace sdaut {

/// Analytical multiply-accumulate count of one forward pass. Convolutions
/// count k*k*Cin*Cout per output pixel (divided by groups), linears M*K*N,
/// attention Q.K^T and A.V one MAC per product term, and bilinear sampling 4
/// per sampled channel-point. Normalization, softmax and activations count 0.
struct MacsReport {
    struct Entry {
        std::string name;
        std::uint64_t macs = 0;
    };
    std::string preset;
    Index height = 0;
    Index width = 0;
    std::vector<Entry> entries;
    std::uint64_t total = 0;

    double giga() const { return static_cast<double>(total) * 1e-9; }
    std::string table() const;
    KeyValueFile to_kv() const;
};

/// Counts for an input of extent `height` x `width`, which must satisfy the
/// config's divisibility rules.
MacsReport macs_estimate(const ModelConfig& cfg, Index height, Index width);

}  // namespace sdaut
