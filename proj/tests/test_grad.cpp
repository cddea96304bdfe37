#include <cmath>

#include "cdraw/grad_check.h"
#include "cdraw/lstm.h"
#include "cdraw/rng.h"
#include "cdraw/tape.h"
#include "doctest.h"

using namespace cdraw;

TEST_CASE("grad_check on a quadratic") {
  // loss = sum(p^2) / 2, exact gradient p. Central differences on a
  // quadratic are exact up to roundoff.
  ParamStore<double> ps;
  Rng rng(2);
  ps.create("p", 1, 2, 3, 3).fill_normal(rng);

  auto loss_fn = [](const ParamStore<double>& s) {
    double acc = 0;
    for (double v : s.at("p").data) acc += 0.5 * v * v;
    return acc;
  };

  GradMap<double> analytic;
  analytic["p"] = ps.at("p");
  auto res = grad_check<double>(loss_fn, ps, analytic, 1e-5);
  CHECK(res.checked == 18);
  CHECK(res.max_rel_err < 1e-8);
}

TEST_CASE("grad_check flags wrong analytic gradient") {
  ParamStore<double> ps;
  ps.create("p", 1, 1, 1, 1).data[0] = 1.5;
  auto loss_fn = [](const ParamStore<double>& s) {
    return s.at("p").data[0] * s.at("p").data[0];
  };
  GradMap<double> analytic;
  analytic["p"] = Tensor4<double>(1, 1, 1, 1);
  analytic["p"].data[0] = 1.0;  // should be 3.0
  auto res = grad_check<double>(loss_fn, ps, analytic, 1e-5);
  CHECK(res.max_rel_err > 0.5);
  CHECK(res.worst_param == "p");
}

TEST_CASE("tape gradient of conv2d against finite differences") {
  Rng rng(13);
  ParamStore<double> ps;
  ps.create("w", 3, 2, 3, 3).fill_normal(rng);
  ps.create("b", 1, 3, 1, 1).fill_normal(rng);
  Tensor4<double> x(2, 2, 5, 5);
  x.fill_normal(rng);
  Tensor4<double> coeff(2, 3, 3, 3);  // non-uniform weights in the scalar
  coeff.fill_normal(rng);

  auto loss_fn = [&](const ParamStore<double>& s) {
    Tensor4<double> y =
        conv2d<double>(x, s.at("w"), s.at("b").data.data(), 2, 1);
    double acc = 0;
    for (size_t i = 0; i < y.data.size(); ++i)
      acc += y.data[i] * coeff.data[i];
    return acc;
  };

  Tape<double> tape;
  auto xv = tape.leaf(x, false);
  auto wv = tape.leaf(ps.at("w"), true);
  auto bv = tape.leaf(ps.at("b"), true);
  auto y = tape.conv(xv, wv, bv, 2, 1);
  auto weighted = tape.mul(y, tape.leaf(coeff, false));
  auto loss = tape.sum_all(weighted);
  tape.backward(loss);

  GradMap<double> analytic;
  analytic["w"] = tape.grad(wv);
  analytic["b"] = tape.grad(bv);
  auto res = grad_check<double>(loss_fn, ps, analytic, 1e-5);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("tape gradient flows to conv input") {
  Rng rng(29);
  ParamStore<double> ps;
  ps.create("x", 1, 2, 6, 6).fill_normal(rng);
  Tensor4<double> w(2, 2, 5, 5);
  w.fill_normal(rng);

  auto loss_fn = [&](const ParamStore<double>& s) {
    Tensor4<double> y = conv2d<double>(s.at("x"), w, nullptr, 2, 2);
    double acc = 0;
    for (double v : y.data) acc += v * v;
    return acc;
  };

  Tape<double> tape;
  auto xv = tape.leaf(ps.at("x"), true);
  auto y = tape.conv(xv, tape.leaf(w, false), -1, 2, 2);
  auto loss = tape.sum_all(tape.square(y));
  tape.backward(loss);

  GradMap<double> analytic;
  analytic["x"] = tape.grad(xv);
  auto res = grad_check<double>(loss_fn, ps, analytic, 1e-5);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("tape gradient of deconv against finite differences") {
  Rng rng(41);
  ParamStore<double> ps;
  ps.create("w", 2, 3, 5, 5).fill_normal(rng);
  ps.create("b", 1, 3, 1, 1).fill_normal(rng);
  Tensor4<double> x(1, 2, 4, 4);
  x.fill_normal(rng);
  Tensor4<double> coeff(1, 3, 8, 8);
  coeff.fill_normal(rng);

  auto loss_fn = [&](const ParamStore<double>& s) {
    Tensor4<double> y = conv_transpose2d<double>(
        x, s.at("w"), s.at("b").data.data(), 2, 2, 8, 8);
    double acc = 0;
    for (size_t i = 0; i < y.data.size(); ++i)
      acc += y.data[i] * coeff.data[i];
    return acc;
  };

  Tape<double> tape;
  auto xv = tape.leaf(x, false);
  auto wv = tape.leaf(ps.at("w"), true);
  auto bv = tape.leaf(ps.at("b"), true);
  auto y = tape.deconv(xv, wv, bv, 2, 2, 8, 8);
  auto loss = tape.sum_all(tape.mul(y, tape.leaf(coeff, false)));
  tape.backward(loss);

  GradMap<double> analytic;
  analytic["w"] = tape.grad(wv);
  analytic["b"] = tape.grad(bv);
  auto res = grad_check<double>(loss_fn, ps, analytic, 1e-5);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("tape gradient through lstm gates and nonlinearities") {
  Rng rng(53);
  const int hidden = 2;
  ParamStore<double> ps;
  ps.create("gates", 1, 4 * hidden, 3, 3).fill_normal(rng);
  ps.create("c0", 1, hidden, 3, 3).fill_normal(rng);

  auto compose = [&](Tape<double>& tape, const ParamStore<double>& s,
                     bool track) {
    auto gv = tape.leaf(s.at("gates"), track);
    auto cv = tape.leaf(s.at("c0"), track);
    auto [h, c] = lstm_gates_apply(tape, gv, cv, hidden);
    auto loss = tape.sum_all(tape.add(tape.square(h), tape.square(c)));
    return std::make_tuple(gv, cv, loss);
  };

  auto loss_fn = [&](const ParamStore<double>& s) {
    Tape<double> tape;
    auto [gv, cv, loss] = compose(tape, s, false);
    return tape.val(loss).data[0];
  };

  Tape<double> tape;
  auto [gv, cv, loss] = compose(tape, ps, true);
  tape.backward(loss);

  GradMap<double> analytic;
  analytic["gates"] = tape.grad(gv);
  analytic["c0"] = tape.grad(cv);
  auto res = grad_check<double>(loss_fn, ps, analytic, 1e-4);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("tape gradient through shape ops") {
  Rng rng(61);
  ParamStore<double> ps;
  ps.create("bias_map", 1, 3, 2, 2).fill_normal(rng);
  ps.create("chan", 1, 3, 1, 1).fill_normal(rng);
  Tensor4<double> mask(4, 4, 2, 2);
  mask.fill_normal(rng);

  auto compose = [&](Tape<double>& tape, const ParamStore<double>& s,
                     bool track) {
    auto bm = tape.leaf(s.at("bias_map"), track);
    auto ch = tape.leaf(s.at("chan"), track);
    auto full = tape.broadcast_batch(bm, 4);
    auto chb = tape.broadcast_chan(ch, 4, 2, 2);
    auto mixed = tape.mul(full, chb);
    auto lo = tape.slice_c(mixed, 0, 2);
    auto hi = tape.slice_c(mixed, 1, 3);
    auto cat = tape.concat_c(lo, hi);
    // cat duplicates channel 1; per-image sums then a weighted total.
    auto prod = tape.mul(cat, tape.leaf(mask, false));
    auto per = tape.sum_per_image(prod);
    auto loss = tape.sum_all(tape.square(per));
    return std::make_tuple(bm, ch, loss);
  };

  auto loss_fn = [&](const ParamStore<double>& s) {
    Tape<double> tape;
    auto [bm, ch, loss] = compose(tape, s, false);
    return tape.val(loss).data[0];
  };

  Tape<double> tape;
  auto [bm, ch, loss] = compose(tape, ps, true);
  tape.backward(loss);

  GradMap<double> analytic;
  analytic["bias_map"] = tape.grad(bm);
  analytic["chan"] = tape.grad(ch);
  auto res = grad_check<double>(loss_fn, ps, analytic, 1e-6);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("tape softplus, exp, clamp, scale gradients") {
  Rng rng(71);
  ParamStore<double> ps;
  ps.create("v", 1, 1, 4, 4).fill_normal(rng);

  auto compose = [&](Tape<double>& tape, const ParamStore<double>& s,
                     bool track) {
    auto v = tape.leaf(s.at("v"), track);
    auto a = tape.softplus(v);
    auto b = tape.exp_(tape.scale(v, 0.5));
    auto c = tape.clamp(v, -0.4, 0.4);
    auto d = tape.add_const(tape.mul(a, b), 0.25);
    auto loss = tape.sum_all(tape.add(d, tape.square(c)));
    return std::make_pair(v, loss);
  };

  auto loss_fn = [&](const ParamStore<double>& s) {
    Tape<double> tape;
    auto [v, loss] = compose(tape, s, false);
    return tape.val(loss).data[0];
  };

  Tape<double> tape;
  auto [v, loss] = compose(tape, ps, true);
  tape.backward(loss);

  GradMap<double> analytic;
  analytic["v"] = tape.grad(v);
  // clamp is nondifferentiable at the boundary; values land there with
  // probability zero under the normal draw.
  auto res = grad_check<double>(loss_fn, ps, analytic, 1e-6);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("backward rejects non-scalar root") {
  Tape<double> tape;
  auto v = tape.leaf(Tensor4<double>(1, 2, 2, 2), true);
  CHECK_THROWS_AS(tape.backward(v), ContractError);
}
