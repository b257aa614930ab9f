#include "tempcomm/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tempcomm/errors.hpp"
#include "tempcomm/rng.hpp"

namespace tempcomm {

ad::Var ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter key: " + name);
    ad::Var v = ad::Var::param(std::move(init));
    index_[name] = items_.size();
    items_.emplace_back(name, v);
    return v;
}

ad::Var ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("unknown parameter key: " + name);
    return items_[it->second].second;
}

std::size_t ParamStore::total_coords() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items_) n += v.value().numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, v] : items_) v.zero_grad();
}

void ParamStore::check_finite() const {
    for (const auto& [name, v] : items_)
        if (!v.value().all_finite()) throw CheckError("non-finite values in parameter " + name);
}

std::vector<Tensor> ParamStore::snapshot() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [name, v] : items_) out.push_back(v.value());
    return out;
}

void ParamStore::restore(const std::vector<Tensor>& snap) {
    if (snap.size() != items_.size()) throw std::logic_error("snapshot size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) items_[i].second.value() = snap[i];
}

void ParamStore::save_checkpoint(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "tempcomm-params";
    j["version"] = 1;
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, v] : items_) {
        params[name] = {{"shape", v.value().shape()}, {"data", v.value().vec()}};
    }
    j["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw DataError("cannot open checkpoint file for writing: " + path);
    out << j.dump();
}

void ParamStore::load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint " + path + ": " + e.what());
    }
    if (j.value("format", "") != "tempcomm-params" || j.value("version", 0) != 1)
        throw DataError("unsupported checkpoint format in " + path);
    const auto& params = j.at("params");
    for (auto& [name, v] : items_) {
        if (!params.contains(name)) throw DataError("checkpoint missing parameter " + name);
        const auto& p = params.at(name);
        std::vector<int> shape = p.at("shape").get<std::vector<int>>();
        if (shape != v.value().shape())
            throw DataError("checkpoint shape mismatch for " + name);
        v.value() = Tensor(shape, p.at("data").get<std::vector<double>>());
    }
}

namespace init {

Tensor xavier_uniform(std::vector<int> shape, Rng& rng) {
    // fan_in/fan_out: dense {out, in}; conv kernels {c0, c1, k} use c1*k / c0*k.
    double fan_in = 1, fan_out = 1;
    if (shape.size() == 1) {
        fan_in = fan_out = shape[0];
    } else if (shape.size() == 2) {
        fan_out = shape[0];
        fan_in = shape[1];
    } else {
        fan_out = shape[0] * shape[2];
        fan_in = shape[1] * shape[2];
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

Tensor orthogonal(int rows, int cols, Rng& rng) {
    const int big = std::max(rows, cols);
    Eigen::MatrixXd g(big, big);
    for (int i = 0; i < big; ++i)
        for (int j = 0; j < big; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < big; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    Tensor t({rows, cols});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t.at(i, j) = q(i, j);
    return t;
}

}  // namespace init

}  // namespace tempcomm
