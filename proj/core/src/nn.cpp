#include "dsam/nn.hpp"

#include <cmath>
#include <cstdio>

#include "dsam/error.hpp"
#include "dsam/hash.hpp"

namespace dsam {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace dsam

namespace dsam::nn {

ag::Var ParameterStore::create(const std::string& name, Tensor init, bool frozen) {
    if (find(name)) fail(Errc::BadConfig, "duplicate parameter name " + name);
    ag::Var v(std::move(init), !frozen);
    params_.push_back({name, v, frozen});
    return v;
}

const Parameter* ParameterStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

Parameter* ParameterStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().numel();
    return n;
}

Tensor kaiming_normal(Tensor::Shape shape, int fan_in, Rng& rng, double gain) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, int in, int out, int kernel,
                      kernels::Conv2dGeometry geo, Rng& rng, bool frozen, double gain) {
    Conv2d c;
    c.weight = store.create(name + ".weight", kaiming_normal({out, in, kernel, kernel}, in * kernel * kernel, rng, gain),
                            frozen);
    c.bias = store.create(name + ".bias", Tensor({out}), frozen);
    c.geo = geo;
    return c;
}

Linear Linear::create(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, bool frozen,
                      double gain) {
    Linear l;
    l.weight = store.create(name + ".weight", kaiming_normal({in, out}, in, rng, gain), frozen);
    l.bias = store.create(name + ".bias", Tensor({out}), frozen);
    return l;
}

Adam::Adam(ParameterStore& store, AdamOptions opts) : opts_(opts) {
    if (!(opts.lr > 0.0)) fail(Errc::BadConfig, "Adam learning rate must be positive");
    for (auto& p : store.all()) {
        if (p.frozen) continue;
        slots_.push_back({&p, Tensor::zeros_like(p.var.value()), Tensor::zeros_like(p.var.value())});
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
        const Tensor& g = s.param->var.grad();
        if (g.empty()) continue;
        Tensor& w = s.param->var.mutable_value();
        for (std::size_t i = 0; i < w.numel(); ++i) {
            s.m[i] = opts_.beta1 * s.m[i] + (1.0 - opts_.beta1) * g[i];
            s.v[i] = opts_.beta2 * s.v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            w[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
        }
    }
}

std::uint64_t parameter_hash(const ParameterStore& store, const std::string& prefix) {
    std::uint64_t h = kFnvOffset;
    for (const auto& p : store.all()) {
        if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
        h = fnv1a(p.name, h);
        h = fnv1a(p.var.value().data(), p.var.value().numel() * sizeof(double), h);
    }
    return h;
}

}  // namespace dsam::nn
