#pragma once

#include "sdkit/autodiff.hpp"
#include "sdkit/tensor.hpp"

#include <stdexcept>

namespace sdkit {

// Coefficient on the first-stage loss term: starts at 0.3, reaches 0 at
// the zero epoch and stays there.
template <typename T>
struct LossScheduleT {
    T c_first_initial = T(0.3);
    int zero_epoch = 5;
    enum class Interp { Linear, Step } interp = Interp::Linear;

    T c_first(int epoch) const {
        if (epoch < 1) throw std::invalid_argument("epochs are 1-based");
        if (epoch >= zero_epoch) return T(0);
        if (interp == Interp::Step) return c_first_initial;
        const T t = T(zero_epoch - epoch) / T(zero_epoch - 1);
        return c_first_initial * t;
    }
};

using LossScheduleF = LossScheduleT<float>;
using LossScheduleD = LossScheduleT<double>;

// MSE over the valid set of gt (pure value; the tape op carries gradients).
template <typename T>
T masked_mse(const TensorT<T>& pred, const SparseDepthMapT<T>& gt) {
    Tape<T> tape(false);
    return tape.value(tape.masked_mse(tape.input(pred), gt))[0];
}

// Scheduled two-term objective: c_first(epoch) * L(d_first) + L(d_final).
template <typename T>
T total_loss(const TensorT<T>& d_first, const TensorT<T>& d_final, const SparseDepthMapT<T>& gt,
             int epoch, const LossScheduleT<T>& sched = {}) {
    const T c = sched.c_first(epoch);
    T out = masked_mse(d_final, gt);
    if (c != T(0)) out += c * masked_mse(d_first, gt);
    return out;
}

// Tape composition used in training. When the schedule coefficient is zero
// the first-stage term is not recorded at all, so d_first receives no
// gradient through this path.
template <typename T>
typename Tape<T>::Var total_loss_on_tape(Tape<T>& tape, typename Tape<T>::Var d_first,
                                         typename Tape<T>::Var d_final,
                                         const SparseDepthMapT<T>& gt, int epoch,
                                         const LossScheduleT<T>& sched = {}) {
    const T c = sched.c_first(epoch);
    auto l_final = tape.masked_mse(d_final, gt);
    if (c == T(0)) return l_final;
    auto l_first = tape.masked_mse(d_first, gt);
    return tape.wsum(c, l_first, T(1), l_final);
}

} // namespace sdkit
