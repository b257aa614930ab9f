#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tempcomm/autodiff.hpp"
#include "tempcomm/nn.hpp"

namespace tempcomm {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int coords_checked = 0;
    bool skipped = false;
    std::string note;
};

struct GradReport {
    double tolerance = 1e-4;
    std::vector<GradCheckEntry> entries;

    bool pass() const;
    double max_error() const;
    /// Names of parameters exceeding tolerance.
    std::vector<std::string> failures() const;
    std::string summary() const;
};

/// Central-finite-difference check of analytic gradients for every parameter
/// in `store` against the scalar loss produced by `loss_builder`. The builder
/// must be deterministic; it is re-evaluated per probe. At most `min_coords`
/// evenly spaced coordinates are probed per parameter (all of them when the
/// parameter is smaller). Relative error denominator:
/// max(|analytic|, |numeric|, 1e-8).
GradReport grad_check(ParamStore& store, const std::function<ad::Var()>& loss_builder,
                      double eps = 1e-5, double tolerance = 1e-4, int min_coords = 100);

}  // namespace tempcomm
