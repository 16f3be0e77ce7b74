// Named parameter store plus the training-side machinery that acts on it:
// gradient accumulation, Adam with decoupled weight decay, global-norm
// clipping, and EMA tracking between two name prefixes.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "jetjepa/autodiff.hpp"
#include "jetjepa/mat.hpp"

namespace jetjepa {

class ParamStore {
public:
    struct Entry {
        Mat value;
        bool decay = false; // weight matrices decay; biases, norms, tokens do not
    };

    Mat& add(const std::string& name, Mat m, bool decay) {
        require(params_.find(name) == params_.end(), "duplicate parameter: " + name);
        auto& e = params_[name];
        e.value = std::move(m);
        e.decay = decay;
        return e.value;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    const Mat& get(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter: " + name);
        return it->second.value;
    }

    Mat& get_mut(const std::string& name) {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter: " + name);
        return it->second.value;
    }

    bool decays(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter: " + name);
        return it->second.decay;
    }

    // std::map keeps this iteration order deterministic.
    const std::map<std::string, Entry>& entries() const { return params_; }
    std::map<std::string, Entry>& entries_mut() { return params_; }

    size_t total_scalars() const {
        size_t n = 0;
        for (const auto& [name, e] : params_) n += e.value.size();
        return n;
    }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [name, e] : params_)
            if (name.rfind(prefix, 0) == 0) out.push_back(name);
        return out;
    }

private:
    std::map<std::string, Entry> params_;
};

// Lazily mirrors store parameters onto a tape as named leaves, one per name.
class TapeParams {
public:
    TapeParams(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

    Tape::Id operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        const Tape::Id id = tape_.param(name, store_.get(name));
        cache_.emplace(name, id);
        return id;
    }

    // Constant (detached) view of a parameter; used on the teacher path.
    Tape::Id detached(const std::string& name) {
        auto it = const_cache_.find(name);
        if (it != const_cache_.end()) return it->second;
        const Tape::Id id = tape_.constant(store_.get(name));
        const_cache_.emplace(name, id);
        return id;
    }

    Tape& tape() { return tape_; }
    const ParamStore& store() const { return store_; }

private:
    Tape& tape_;
    const ParamStore& store_;
    std::map<std::string, Tape::Id> cache_;
    std::map<std::string, Tape::Id> const_cache_;
};

// Accumulated gradients keyed by parameter name.
using GradMap = std::map<std::string, Mat>;

inline void accumulate_grads(GradMap& into, const Tape& tape) {
    tape.for_each_param_grad([&](const std::string& name, const Mat& g) {
        auto it = into.find(name);
        if (it == into.end()) {
            into.emplace(name, g);
        } else {
            for (size_t i = 0; i < g.v.size(); ++i) it->second.v[i] += g.v[i];
        }
    });
}

inline void merge_grads(GradMap& into, const GradMap& from, double scale = 1.0) {
    for (const auto& [name, g] : from) {
        auto it = into.find(name);
        if (it == into.end()) {
            Mat m = g;
            for (auto& x : m.v) x *= scale;
            into.emplace(name, std::move(m));
        } else {
            for (size_t i = 0; i < g.v.size(); ++i) it->second.v[i] += scale * g.v[i];
        }
    }
}

inline double grad_global_norm(const GradMap& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double x : g.v) sq += x * x;
    return std::sqrt(sq);
}

inline void clip_grads(GradMap& grads, double max_norm, double norm) {
    if (norm <= max_norm || norm == 0.0) return;
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
        for (auto& x : g.v) x *= s;
}

// Adam with decoupled weight decay. Moments are keyed by parameter name and
// created on first touch; parameters never touched by a gradient stay put.
class AdamOptimizer {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;

    void step(ParamStore& store, const GradMap& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (const auto& [name, g] : grads) {
            Mat& p = store.get_mut(name);
            Mat& m = moment(m1_, name, p);
            Mat& v = moment(m2_, name, p);
            const bool decay = store.decays(name);
            for (size_t i = 0; i < p.v.size(); ++i) {
                m.v[i] = beta1 * m.v[i] + (1.0 - beta1) * g.v[i];
                v.v[i] = beta2 * v.v[i] + (1.0 - beta2) * g.v[i] * g.v[i];
                const double mhat = m.v[i] / bc1;
                const double vhat = v.v[i] / bc2;
                double upd = mhat / (std::sqrt(vhat) + eps);
                if (decay) upd += weight_decay * p.v[i];
                p.v[i] -= lr * upd;
            }
        }
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }

    const std::map<std::string, Mat>& m1() const { return m1_; }
    const std::map<std::string, Mat>& m2() const { return m2_; }
    std::map<std::string, Mat>& m1_mut() { return m1_; }
    std::map<std::string, Mat>& m2_mut() { return m2_; }

private:
    static Mat& moment(std::map<std::string, Mat>& mm, const std::string& name, const Mat& shape) {
        auto it = mm.find(name);
        if (it == mm.end()) it = mm.emplace(name, Mat(shape.rows, shape.cols)).first;
        return it->second;
    }

    std::map<std::string, Mat> m1_;
    std::map<std::string, Mat> m2_;
    int64_t t_ = 0;
};

// teacher <- momentum * teacher + (1 - momentum) * student, matched by suffix
// under the two prefixes. Never touches anything else; no gradients involved.
inline void ema_update(ParamStore& store, const std::string& teacher_prefix,
                       const std::string& student_prefix, double momentum) {
    require(momentum >= 0.0 && momentum <= 1.0, "ema_update: momentum must be in [0, 1]");
    for (auto& [name, e] : store.entries_mut()) {
        if (name.rfind(teacher_prefix, 0) != 0) continue;
        const std::string peer = student_prefix + name.substr(teacher_prefix.size());
        const Mat& s = store.get(peer);
        require(s.same_shape(e.value), "ema_update: shape mismatch for " + name);
        for (size_t i = 0; i < e.value.v.size(); ++i)
            e.value.v[i] = momentum * e.value.v[i] + (1.0 - momentum) * s.v[i];
    }
}

} // namespace jetjepa
