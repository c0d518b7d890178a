#pragma once

// Central finite-difference gradient verification at 64-bit precision.

#include "sdkit/autodiff.hpp"
#include "sdkit/rng.hpp"
#include "sdkit/tensor.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

namespace gradcheck {

struct Built {
    sdkit::Tape<double>::Var output; // scalar
    std::vector<sdkit::Tape<double>::Var> leaves;
};

// Builds the graph from the current contents of the leaf tensors; called
// once for the analytic pass and twice per perturbed element.
using Builder = std::function<Built(sdkit::Tape<double>&)>;

struct Result {
    double max_rel_err = 0;
    std::size_t checked = 0;
};

inline Result run(const Builder& build, const std::vector<sdkit::TensorD*>& leaves,
                  double h = 1e-5) {
    Result res;
    std::vector<std::vector<double>> analytic;
    {
        sdkit::Tape<double> tape;
        Built b = build(tape);
        tape.backward(b.output, std::vector<double>{1.0}, false);
        for (auto v : b.leaves) analytic.push_back(tape.grad(v));
    }
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& t = *leaves[li];
        for (std::size_t j = 0; j < t.data.size(); ++j) {
            const double orig = t.data[j];
            const double hj = h * std::max(1.0, std::abs(orig));
            t.data[j] = orig + hj;
            double jp;
            {
                sdkit::Tape<double> tape(false);
                jp = tape.value(build(tape).output)[0];
            }
            t.data[j] = orig - hj;
            double jm;
            {
                sdkit::Tape<double> tape(false);
                jm = tape.value(build(tape).output)[0];
            }
            t.data[j] = orig;
            const double fd = (jp - jm) / (2 * hj);
            const double an = analytic[li][j];
            const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.checked;
        }
    }
    return res;
}

// Frozen random projection so any-shaped outputs reduce to one scalar.
inline std::shared_ptr<std::vector<double>> projection(std::size_t n, sdkit::Rng& rng) {
    auto r = std::make_shared<std::vector<double>>(n);
    for (auto& v : *r) v = rng.uniform(-1.0, 1.0);
    return r;
}

inline void fill_uniform(sdkit::TensorD& t, sdkit::Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.data) v = rng.uniform(lo, hi);
}

} // namespace gradcheck
