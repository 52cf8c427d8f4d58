#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsam/autograd.hpp"

namespace dsam::nn {

using Rng = std::mt19937_64;

struct Parameter {
    std::string name;
    ag::Var var;
    bool frozen = false;
};

/// Owns every parameter of a model under a dotted name ("fm.bc1.up.weight").
/// Frozen parameters are leaves that never request gradients.
class ParameterStore {
public:
    ag::Var create(const std::string& name, Tensor init, bool frozen);

    const std::vector<Parameter>& all() const noexcept { return params_; }
    std::vector<Parameter>& all() noexcept { return params_; }
    const Parameter* find(const std::string& name) const;
    Parameter* find(const std::string& name);

    void zero_grad();
    std::size_t scalar_count() const;

private:
    std::vector<Parameter> params_;
};

/// N(0, gain^2 / fan_in)
Tensor kaiming_normal(Tensor::Shape shape, int fan_in, Rng& rng, double gain = 1.4142135623730951);

struct Conv2d {
    ag::Var weight;
    ag::Var bias;
    kernels::Conv2dGeometry geo;

    static Conv2d create(ParameterStore& store, const std::string& name, int in, int out, int kernel,
                         kernels::Conv2dGeometry geo, Rng& rng, bool frozen, double gain = 1.4142135623730951);
    /// "Same" padding for an odd kernel at the given dilation.
    static kernels::Conv2dGeometry same(int kernel, int dilation = 1) { return {1, dilation * (kernel - 1) / 2, dilation}; }

    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, geo); }
    int in_channels() const { return weight.shape()[1]; }
    int out_channels() const { return weight.shape()[0]; }
};

struct Linear {
    ag::Var weight;  ///< [in, out]
    ag::Var bias;    ///< [out]

    static Linear create(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, bool frozen,
                         double gain = 1.0);
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over the non-frozen parameters of a store.
class Adam {
public:
    Adam(ParameterStore& store, AdamOptions opts);
    void step();
    void set_lr(double lr) noexcept { opts_.lr = lr; }
    std::int64_t steps() const noexcept { return t_; }

private:
    struct Slot {
        Parameter* param;
        Tensor m, v;
    };
    AdamOptions opts_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

/// FNV-1a over the raw bytes of every parameter whose name starts with prefix.
std::uint64_t parameter_hash(const ParameterStore& store, const std::string& prefix);

}  // namespace dsam::nn
