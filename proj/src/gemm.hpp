#pragma once

#include "sdaut/tensor.hpp"

namespace sdaut::detail {

/// C[m,n] = op(A) * op(B), or += when `accumulate`. Row-major storage; A is
/// [m,k] ([k,m] when trans_a) and B is [k,n] ([n,k] when trans_b).
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, const double* a, const double* b, double* c,
          bool accumulate);

}  // namespace sdaut::detail
