#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmaseg/tape.hpp"

namespace cmaseg {

// Scalar-valued function of a fixed set of input tensors. The function must
// be deterministic and must route every op through the given tape.
using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_location;  // "input{i}[{flat}]"
    size_t coords_checked = 0;
    bool passed(double tol) const { return max_rel_err < tol; }
};

// Central finite differences (f(x+eps) - f(x-eps)) / (2 eps) per coordinate
// against tape gradients. Relative error uses max(|analytic|, |numeric|, 1e-3)
// as denominator so dead coordinates do not blow up on rounding noise.
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps = 1e-5);

// Finite-difference check restricted to chosen coordinates of live tensors.
// `eval` must recompute the scalar loss from current tensor values (no
// recording); `coords` carry the analytic gradient for each coordinate.
struct CoordCheck {
    std::string name;
    Tensor tensor;
    size_t flat_index = 0;
    double analytic = 0.0;
};
GradCheckReport fd_check_coords(const std::function<double()>& eval,
                                const std::vector<CoordCheck>& coords, double eps = 1e-5);

// Named grad-check cases covering every differentiable op, used by both the
// test suite and the `grad-check --scope ops` CLI command.
struct NamedCheck {
    std::string name;
    std::function<GradCheckReport(uint64_t seed)> run;
    double tol;
};
std::vector<NamedCheck> op_grad_checks();

}  // namespace cmaseg
