#include <cmath>

#include "cdraw/lstm.h"
#include "cdraw/rng.h"
#include "doctest.h"

using namespace cdraw;

namespace {

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("lstm gates at zero pre-activations") {
  // All-zero gate block and zero previous cell: i = f = o = 0.5, g = 0,
  // so c' = 0 and h' = 0.
  Tape<double> tape;
  const int hidden = 3;
  Tensor4<double> gates_v(2, 4 * hidden, 2, 2);
  Tensor4<double> c_v(2, hidden, 2, 2);
  auto gates = tape.leaf(gates_v, false);
  auto c_prev = tape.leaf(c_v, false);
  auto [h, c] = lstm_gates_apply(tape, gates, c_prev, hidden);
  for (double v : tape.val(h).data) CHECK(v == doctest::Approx(0.0));
  for (double v : tape.val(c).data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("lstm forget-gate saturation keeps the cell") {
  // Forget pre-activation +20, input gate closed at -20: c' == c closely.
  Tape<double> tape;
  const int hidden = 2;
  Rng rng(5);
  Tensor4<double> gates_v(1, 4 * hidden, 3, 3);
  for (int ch = 0; ch < hidden; ++ch)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        gates_v.at(0, ch, y, x) = -20.0;          // input gate
        gates_v.at(0, ch + hidden, y, x) = 20.0;  // forget gate
      }
  Tensor4<double> c_v(1, hidden, 3, 3);
  c_v.fill_normal(rng);
  auto gates = tape.leaf(gates_v, false);
  auto c_prev = tape.leaf(c_v, false);
  auto [h, c] = lstm_gates_apply(tape, gates, c_prev, hidden);
  const auto& c_new = tape.val(c);
  for (size_t i = 0; i < c_v.data.size(); ++i)
    CHECK(c_new.data[i] == doctest::Approx(c_v.data[i]).epsilon(1e-6));
}

TEST_CASE("conv_lstm_step matches scalar reference") {
  Rng rng(17);
  const int hidden = 3, in_c = 2, n = 2, hw = 4;

  ConvLstmCell<double> cell;
  ConvKernel<double> kin;
  kin.w = Tensor4<double>(4 * hidden, in_c, 3, 3);
  kin.w.fill_normal(rng);
  kin.stride = 1;
  kin.pad = 1;
  cell.input_kernels.push_back(kin);
  cell.recurrent.w = Tensor4<double>(4 * hidden, hidden, 3, 3);
  cell.recurrent.w.fill_normal(rng);
  cell.recurrent.stride = 1;
  cell.recurrent.pad = 1;
  cell.bias.resize(4 * hidden);
  for (auto& b : cell.bias) b = rng.normal();

  Tensor4<double> x(n, in_c, hw, hw);
  x.fill_normal(rng);
  ConvLstmState<double> st;
  st.h = Tensor4<double>(n, hidden, hw, hw);
  st.h.fill_normal(rng);
  st.c = Tensor4<double>(n, hidden, hw, hw);
  st.c.fill_normal(rng);

  ConvLstmState<double> out = conv_lstm_step(st, {x}, cell);

  // Scalar reference: gate pre-activations by direct convolution sums, then
  // the elementwise LSTM equations.
  auto gate_pre = [&](int in_n, int ch, int oy, int ox) {
    double acc = cell.bias[ch];
    for (int ic = 0; ic < in_c; ++ic)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          int iy = oy - 1 + ky, ix = ox - 1 + kx;
          if (iy < 0 || iy >= hw || ix < 0 || ix >= hw) continue;
          acc += x.at(in_n, ic, iy, ix) * kin.w.at(ch, ic, ky, kx);
        }
    for (int ic = 0; ic < hidden; ++ic)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          int iy = oy - 1 + ky, ix = ox - 1 + kx;
          if (iy < 0 || iy >= hw || ix < 0 || ix >= hw) continue;
          acc +=
              st.h.at(in_n, ic, iy, ix) * cell.recurrent.w.at(ch, ic, ky, kx);
        }
    return acc;
  };

  for (int in_n = 0; in_n < n; ++in_n)
    for (int ch = 0; ch < hidden; ++ch)
      for (int oy = 0; oy < hw; ++oy)
        for (int ox = 0; ox < hw; ++ox) {
          double i = sigmoid_ref(gate_pre(in_n, ch, oy, ox));
          double f = sigmoid_ref(gate_pre(in_n, ch + hidden, oy, ox));
          double o = sigmoid_ref(gate_pre(in_n, ch + 2 * hidden, oy, ox));
          double g = std::tanh(gate_pre(in_n, ch + 3 * hidden, oy, ox));
          double c_ref = f * st.c.at(in_n, ch, oy, ox) + i * g;
          double h_ref = o * std::tanh(c_ref);
          CHECK(out.c.at(in_n, ch, oy, ox) ==
                doctest::Approx(c_ref).epsilon(1e-6));
          CHECK(out.h.at(in_n, ch, oy, ox) ==
                doctest::Approx(h_ref).epsilon(1e-6));
        }
}

TEST_CASE("conv_lstm_step input count mismatch raises") {
  ConvLstmCell<double> cell;
  cell.recurrent.w = Tensor4<double>(4, 1, 3, 3);
  cell.recurrent.pad = 1;
  ConvLstmState<double> st;
  st.h = Tensor4<double>(1, 1, 2, 2);
  st.c = Tensor4<double>(1, 1, 2, 2);
  Tensor4<double> x(1, 1, 2, 2);
  CHECK_THROWS_AS(conv_lstm_step(st, {x}, cell), ContractError);
}
