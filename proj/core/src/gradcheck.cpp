#include "tempcomm/gradcheck.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <sstream>

#include "tempcomm/errors.hpp"

namespace tempcomm {

bool GradReport::pass() const {
    for (const auto& e : entries)
        if (!e.skipped && e.max_rel_err > tolerance) return false;
    return true;
}

double GradReport::max_error() const {
    double m = 0.0;
    for (const auto& e : entries)
        if (!e.skipped) m = std::max(m, e.max_rel_err);
    return m;
}

std::vector<std::string> GradReport::failures() const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (!e.skipped && e.max_rel_err > tolerance) out.push_back(e.name);
    return out;
}

std::string GradReport::summary() const {
    std::ostringstream os;
    os << (pass() ? "PASS" : "FAIL") << " max_rel_err=" << max_error()
       << " tol=" << tolerance << " params=" << entries.size();
    return os.str();
}

GradReport grad_check(ParamStore& store, const std::function<ad::Var()>& loss_builder,
                      double eps, double tolerance, int min_coords) {
    GradReport report;
    report.tolerance = tolerance;

    store.zero_grad();
    ad::Var loss = loss_builder();
    if (!loss.value().all_finite())
        throw CheckError("grad_check: non-finite loss at base point");
    ad::backward(loss);

    // Snapshot analytic grads before probing.
    std::vector<Tensor> analytic;
    analytic.reserve(store.size());
    for (const auto& [name, v] : store.items()) {
        analytic.push_back(v.grad().numel() ? v.grad() : Tensor::zeros(v.value().shape()));
    }

    auto eval_loss = [&]() {
        ad::NoGradGuard guard;
        ad::Var l = loss_builder();
        return l.value()[0];
    };

    // Central differences cannot resolve discrepancies below the rounding of
    // the loss itself; treat those as exact agreement instead of failures.
    const double f_base = loss.value()[0];
    const double fd_resolution = 8.0 * std::numeric_limits<double>::epsilon() *
                                 std::max(1.0, std::abs(f_base)) / (2.0 * eps);

    std::size_t pi = 0;
    for (const auto& [name, param] : store.items()) {
        ad::Var v = param;  // shares the node; gives mutable access
        const std::size_t numel = v.value().numel();
        const std::size_t count = std::min<std::size_t>(numel, static_cast<std::size_t>(min_coords));
        GradCheckEntry entry;
        entry.name = name;
        entry.coords_checked = static_cast<int>(count);
        for (std::size_t c = 0; c < count; ++c) {
            const std::size_t idx = c * numel / count;  // evenly spaced, deterministic
            const double original = v.value()[idx];
            v.value()[idx] = original + eps;
            const double f_plus = eval_loss();
            v.value()[idx] = original - eps;
            const double f_minus = eval_loss();
            v.value()[idx] = original;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
                throw CheckError("grad_check: non-finite loss while perturbing " + name);
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double a = analytic[pi][idx];
            if (std::abs(a - numeric) <= fd_resolution) continue;
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            entry.max_rel_err = std::max(entry.max_rel_err, std::abs(a - numeric) / denom);
        }
        report.entries.push_back(std::move(entry));
        ++pi;
    }
    store.zero_grad();
    return report;
}

}  // namespace tempcomm
