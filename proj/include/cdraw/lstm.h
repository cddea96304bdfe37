#ifndef CDRAW_LSTM_H_
#define CDRAW_LSTM_H_

#include <utility>
#include <vector>

#include "cdraw/conv.h"
#include "cdraw/tape.h"
#include "cdraw/tensor.h"

namespace cdraw {

template <typename T>
struct ConvLstmState {
  Tensor4<T> h;  // hidden map
  Tensor4<T> c;  // cell map, same shape

  void check() const { require_same_shape(h, c, "ConvLstmState"); }
};

// Gate block layout along channels: [input | forget | output | candidate],
// each `hidden` channels wide.
template <typename T>
std::pair<typename Tape<T>::Var, typename Tape<T>::Var> lstm_gates_apply(
    Tape<T>& tape, typename Tape<T>::Var gates, typename Tape<T>::Var c_prev,
    int hidden) {
  using Var = typename Tape<T>::Var;
  const Var i = tape.sigmoid(tape.slice_c(gates, 0, hidden));
  const Var f = tape.sigmoid(tape.slice_c(gates, hidden, 2 * hidden));
  const Var o = tape.sigmoid(tape.slice_c(gates, 2 * hidden, 3 * hidden));
  const Var g = tape.tanh_(tape.slice_c(gates, 3 * hidden, 4 * hidden));
  const Var c_new = tape.add(tape.mul(f, c_prev), tape.mul(i, g));
  const Var h_new = tape.mul(o, tape.tanh_(c_new));
  return {h_new, c_new};
}

// LSTM cell where every linear map is a convolution. No peepholes.
// input_kernels[i] consumes inputs[i]; `recurrent` consumes h. All kernel
// outputs must land on the state's spatial dims with 4x hidden channels.
template <typename T>
struct ConvLstmCell {
  std::vector<ConvKernel<T>> input_kernels;
  ConvKernel<T> recurrent;
  std::vector<T> bias;  // 4 * hidden, applied once
};

// One step of the convolutional LSTM on plain tensors. Composes the same
// tape ops the model uses, so there is a single definition of the cell.
template <typename T>
ConvLstmState<T> conv_lstm_step(const ConvLstmState<T>& state,
                                const std::vector<Tensor4<T>>& inputs,
                                const ConvLstmCell<T>& cell) {
  state.check();
  if (inputs.size() != cell.input_kernels.size())
    throw ContractError("conv_lstm_step: " + std::to_string(inputs.size()) +
                        " inputs for " +
                        std::to_string(cell.input_kernels.size()) +
                        " kernels");
  const int hidden = state.h.c;

  Tape<T> tape;
  using Var = typename Tape<T>::Var;
  Tensor4<T> bias_t(1, 4 * hidden, 1, 1);
  if (!cell.bias.empty()) {
    if (static_cast<int>(cell.bias.size()) != 4 * hidden)
      throw ContractError("conv_lstm_step: bias size mismatch");
    std::copy(cell.bias.begin(), cell.bias.end(), bias_t.data.begin());
  }

  const Var h = tape.leaf(state.h);
  const Var c = tape.leaf(state.c);
  Var gates = tape.conv(h, tape.leaf(cell.recurrent.w),
                        tape.leaf(std::move(bias_t)), cell.recurrent.stride,
                        cell.recurrent.pad);
  for (size_t i = 0; i < inputs.size(); ++i) {
    const ConvKernel<T>& k = cell.input_kernels[i];
    const Var contrib = tape.conv(tape.leaf(inputs[i]), tape.leaf(k.w), -1,
                                  k.stride, k.pad);
    if (!tape.val(contrib).same_shape(tape.val(gates)))
      throw ContractError("conv_lstm_step: input " + std::to_string(i) +
                          " maps to " + tape.val(contrib).shape_str() +
                          ", state needs " + tape.val(gates).shape_str());
    gates = tape.add(gates, contrib);
  }
  auto [h_new, c_new] = lstm_gates_apply(tape, gates, c, hidden);
  return {tape.val(h_new), tape.val(c_new)};
}

}  // namespace cdraw

#endif  // CDRAW_LSTM_H_
