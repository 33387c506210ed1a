#include "gemm.hpp"

#include <Eigen/Core>

namespace sdaut::detail {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

template <typename L, typename R>
void assign(MutMap& c, const L& lhs, const R& rhs, bool accumulate) {
    if (accumulate) {
        c.noalias() += lhs * rhs;
    } else {
        c.noalias() = lhs * rhs;
    }
}
}  // namespace

void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, const double* a, const double* b, double* c,
          bool accumulate) {
    MutMap cm(c, m, n);
    if (k == 0) {
        if (!accumulate) cm.setZero();
        return;
    }
    const ConstMap am(a, trans_a ? k : m, trans_a ? m : k);
    const ConstMap bm(b, trans_b ? n : k, trans_b ? k : n);
    if (!trans_a && !trans_b) {
        assign(cm, am, bm, accumulate);
    } else if (trans_a && !trans_b) {
        assign(cm, am.transpose(), bm, accumulate);
    } else if (!trans_a && trans_b) {
        assign(cm, am, bm.transpose(), accumulate);
    } else {
        assign(cm, am.transpose(), bm.transpose(), accumulate);
    }
}

}  // namespace sdaut::detail
