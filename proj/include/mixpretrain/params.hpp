#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mixpretrain/autograd.hpp"

namespace mixpretrain {

/// Named, ordered registry of learnable blocks. Names are unique; insertion
/// order is the serialization order.
template <class T>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Var<T> var;
    };

    Var<T> add(const std::string& name, Matrix<T> init) {
        if (index_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
        auto v = make_var(std::move(init), true);
        index_.emplace(name, entries_.size());
        entries_.push_back({name, v});
        return v;
    }

    /// Weight matrix drawn from N(0, 1/fan_in).
    Var<T> add_weight(const std::string& name, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        Matrix<T> w(fan_in, fan_out);
        for (auto& x : w.storage()) x = static_cast<T>(dist(rng));
        return add(name, std::move(w));
    }
    Var<T> add_constant(const std::string& name, std::size_t n, T value) {
        return add(name, Matrix<T>(1, n, value));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Var<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter block '" + name + "'");
        return entries_[it->second].var;
    }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.var->value.size();
        return n;
    }
    std::size_t count_prefix(const std::string& prefix) const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) n += e.var->value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.var->grad = Matrix<T>();
    }

  private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Moments are keyed by
/// parameter name so they survive checkpointing.
template <class T>
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore<T>& params, T grad_scale = T{1}) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& e : params.entries()) {
            if (!e.var->has_grad()) continue;
            auto& st = state_[e.name];
            auto& w = e.var->value;
            if (st.m.empty()) {
                st.m = Matrix<T>(w.rows(), w.cols());
                st.v = Matrix<T>(w.rows(), w.cols());
            }
            const auto& g = e.var->grad;
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = static_cast<double>(g[i]) * grad_scale;
                st.m[i] = static_cast<T>(cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi);
                st.v[i] = static_cast<T>(cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi);
                const double mhat = st.m[i] / c1;
                const double vhat = st.v[i] / c2;
                w[i] = static_cast<T>(w[i] - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    struct Moments {
        Matrix<T> m, v;
    };
    std::map<std::string, Moments>& state() noexcept { return state_; }
    const std::map<std::string, Moments>& state() const noexcept { return state_; }
    std::uint64_t steps() const noexcept { return t_; }
    void set_steps(std::uint64_t t) noexcept { t_ = t; }
    AdamConfig& config() noexcept { return cfg_; }

  private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

}  // namespace mixpretrain
