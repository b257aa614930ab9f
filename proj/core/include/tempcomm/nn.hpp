#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tempcomm/autodiff.hpp"
#include "tempcomm/tensor.hpp"

namespace tempcomm {

class Rng;

/// Named learnable parameters. Every symbol used by an implemented equation
/// lives under exactly one key; duplicate registration throws.
class ParamStore {
public:
    ad::Var add(const std::string& name, Tensor init);
    ad::Var get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::pair<std::string, ad::Var>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::size_t total_coords() const;

    void zero_grad();
    /// Throws CheckError naming the first parameter with a non-finite value.
    void check_finite() const;

    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& snap);

    /// Versioned JSON checkpoint: {name -> shape + flat values}, text format,
    /// doubles round-trip exactly.
    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    std::vector<std::pair<std::string, ad::Var>> items_;
    std::map<std::string, std::size_t> index_;
};

namespace init {

/// Xavier-uniform for dense maps: bound sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::vector<int> shape, Rng& rng);
/// Orthogonal rows/columns (QR of a Gaussian), for recurrent weights.
Tensor orthogonal(int rows, int cols, Rng& rng);

}  // namespace init

}  // namespace tempcomm
