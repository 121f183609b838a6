#include <catch2/catch_amalgamated.hpp>

#include "sifuse/nn.hpp"

using namespace sifuse;

namespace {

// Compares the taped gradient of a scalar-valued builder against central
// finite differences on the same input.
template <typename Builder>
void check_grad(Tensor x, Builder build, real tol = 1e-6) {
  Var vx(x, true);
  Var loss = build(vx);
  backward(loss);
  Tensor numeric = finite_difference(
      [&](const Tensor& t) {
        NoGrad ng;
        Var v(t);
        return build(v).val().v[0];
      },
      x);
  for (size_t i = 0; i < x.v.size(); ++i) {
    real scale = std::max({std::abs(numeric.v[i]), std::abs(vx.grad().v[i]), 1.0});
    REQUIRE(std::abs(numeric.v[i] - vx.grad().v[i]) / scale < tol);
  }
}

Tensor rnd(Rng& rng, int c, int h, int w) { return normal_tensor(rng, c, h, w); }

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(3);
  Tensor other = rnd(rng, 2, 3, 3);
  Var vo(other);

  check_grad(rnd(rng, 2, 3, 3),
             [&](const Var& x) { return mean_all(mul(add(x, vo), x)); });
  check_grad(rnd(rng, 2, 3, 3),
             [&](const Var& x) { return sum_all(sub(x, vo)); });
  check_grad(rnd(rng, 2, 3, 3),
             [&](const Var& x) { return mean_all(axpby(0.3, x, -1.7, vo)); });
  check_grad(rnd(rng, 2, 3, 3),
             [&](const Var& x) { return mean_all(one_minus(mul_scalar(x, 2.5))); });
  check_grad(rnd(rng, 2, 3, 3),
             [&](const Var& x) { return mean_all(sigmoid(add_scalar(x, 0.2))); });
  check_grad(rnd(rng, 2, 3, 3),
             [&](const Var& x) { return mean_all(silu(x)); });

  // Kinked ops checked away from their kinks.
  Tensor far = rnd(rng, 2, 3, 3);
  for (auto& v : far.v) v += (v >= 0 ? 1.0 : -1.0);
  check_grad(far, [&](const Var& x) { return mean_all(relu(x)); });
  check_grad(far, [&](const Var& x) { return mean_all(abs_v(x)); });
  check_grad(far, [&](const Var& x) { return mean_all(minimum_scalar(x, 0.4)); });
  check_grad(far, [&](const Var& x) { return mean_all(maximum(x, vo)); });

  Tensor mask(2, 3, 3);
  for (size_t i = 0; i < mask.v.size(); ++i) mask.v[i] = (i % 3 == 0) ? 1.0 : 0.0;
  check_grad(rnd(rng, 2, 3, 3),
             [&](const Var& x) { return mean_all(mul_const(x, mask)); });

  check_grad(rnd(rng, 2, 3, 3), [&](const Var& x) {
    return mean_all(concat_c({x, vo, mul_scalar(x, -1.0)}));
  });
  check_grad(rnd(rng, 4, 3, 3),
             [&](const Var& x) { return mean_all(slice_c(x, 1, 3)); });
}

TEST_CASE("conv2d gradients (input, weight, bias)") {
  Rng rng(5);
  Tensor w = rnd(rng, 3, 2, 9);  // co=3, ci=2, k=3
  Tensor b = rnd(rng, 3, 1, 1);

  SECTION("stride 1, pad 1") {
    Var vw(w, true), vb(b, true);
    Tensor x = rnd(rng, 2, 5, 5);
    check_grad(x, [&](const Var& v) {
      return mean_all(conv2d(v, vw, vb, 3, 1, 1));
    });

    // Weight and bias gradients.
    vw.zero_grad();
    vb.zero_grad();
    Var vx(x);
    Var loss = mean_all(conv2d(vx, vw, vb, 3, 1, 1));
    backward(loss);
    Tensor gw_num = finite_difference(
        [&](const Tensor& t) {
          NoGrad ng;
          return mean_all(conv2d(vx, Var(t), Var(b), 3, 1, 1)).val().v[0];
        },
        w);
    REQUIRE(max_abs_diff(gw_num, vw.grad()) < 1e-6);
    Tensor gb_num = finite_difference(
        [&](const Tensor& t) {
          NoGrad ng;
          return mean_all(conv2d(vx, Var(w), Var(t), 3, 1, 1)).val().v[0];
        },
        b);
    REQUIRE(max_abs_diff(gb_num, vb.grad()) < 1e-6);
  }

  SECTION("stride 2 downsampling") {
    Var vw(w), vb(b);
    check_grad(rnd(rng, 2, 6, 6), [&](const Var& v) {
      return mean_all(conv2d(v, vw, vb, 3, 2, 1));
    });
  }
}

TEST_CASE("linear and channel_bias gradients") {
  Rng rng(6);
  Tensor w = rnd(rng, 4, 3, 1);
  Tensor b = rnd(rng, 4, 1, 1);
  Var vw(w, true), vb(b, true);
  check_grad(rnd(rng, 3, 1, 1),
             [&](const Var& x) { return mean_all(linear(x, vw, vb)); });

  Tensor cb = rnd(rng, 2, 1, 1);
  Var vcb(cb, true);
  check_grad(rnd(rng, 2, 4, 4),
             [&](const Var& x) { return mean_all(mul(channel_bias(x, vcb),
                                                     channel_bias(x, vcb))); });
  // Bias gradient path.
  vcb.zero_grad();
  Var vx(rnd(rng, 2, 4, 4));
  Var loss = mean_all(mul(channel_bias(vx, vcb), channel_bias(vx, vcb)));
  backward(loss);
  Tensor gnum = finite_difference(
      [&](const Tensor& t) {
        NoGrad ng;
        Var tb(t);
        return mean_all(mul(channel_bias(vx, tb), channel_bias(vx, tb)))
            .val()
            .v[0];
      },
      cb);
  REQUIRE(max_abs_diff(gnum, vcb.grad()) < 1e-6);
}

TEST_CASE("instance_norm standardizes and its gradient checks out") {
  Rng rng(8);
  Tensor x = rnd(rng, 3, 6, 6);
  for (auto& v : x.v) v = v * 2.0 + 0.5;

  Var vx(x);
  Var y = instance_norm(vx);
  size_t plane = 36;
  for (int ic = 0; ic < 3; ++ic) {
    real m = 0.0, var = 0.0;
    for (size_t i = 0; i < plane; ++i) m += y.val().v[ic * plane + i];
    m /= real(plane);
    for (size_t i = 0; i < plane; ++i) {
      real d = y.val().v[ic * plane + i] - m;
      var += d * d;
    }
    var /= real(plane);
    REQUIRE(std::abs(m) < 1e-3);
    REQUIRE(std::abs(var - 1.0) < 1e-3);
  }

  check_grad(x, [&](const Var& v) {
    return mean_all(mul(instance_norm(v), instance_norm(v)));
  }, 1e-5);
}

TEST_CASE("upsample_nearest gradient and shape") {
  Rng rng(9);
  Var vo(rnd(rng, 1, 6, 6));
  check_grad(rnd(rng, 1, 3, 3), [&](const Var& x) {
    return mean_all(mul(upsample_nearest(x, 2), vo));
  });
  Var up = upsample_nearest(Var(rnd(rng, 2, 3, 3)), 4);
  REQUIRE(up.h() == 12);
  REQUIRE(up.w() == 12);
}

TEST_CASE("softmax cross entropy value and gradient") {
  Rng rng(10);
  GridI label(3, 3);
  for (int i = 0; i < 9; ++i) label.v[i] = i % 4;

  // Uniform logits cost exactly ln K per pixel.
  Tensor uniform(4, 3, 3);
  Var u(uniform);
  Var lu = softmax_cross_entropy(u, label);
  REQUIRE(lu.val().v[0] == Catch::Approx(std::log(4.0)));

  check_grad(rnd(rng, 4, 3, 3), [&](const Var& x) {
    return softmax_cross_entropy(x, label);
  });

  GridI bad(3, 3);
  bad.v[0] = 7;
  REQUIRE_THROWS_AS(softmax_cross_entropy(u, bad), ParamError);
}

TEST_CASE("tape bookkeeping") {
  Rng rng(12);
  Tensor x = rnd(rng, 2, 2, 2);

  SECTION("NoGrad records nothing") {
    Var vx(x, true);
    NoGrad ng;
    Var y = mul(vx, vx);
    REQUIRE_FALSE(y.node->on_tape);
    REQUIRE(y.node->parents.empty());
  }

  SECTION("ops on disconnected inputs stay off the tape") {
    Var a(x), b(x);
    Var y = mul(a, b);
    REQUIRE_FALSE(y.node->on_tape);
  }

  SECTION("gradients accumulate across backward calls") {
    Var vx(x, true);
    Var l1 = mean_all(vx);
    backward(l1);
    Tensor g1 = vx.grad();
    Var l2 = mean_all(vx);
    backward(l2);
    for (size_t i = 0; i < g1.v.size(); ++i)
      REQUIRE(vx.grad().v[i] == Catch::Approx(2.0 * g1.v[i]));
    vx.zero_grad();
    for (real g : vx.grad().v) REQUIRE(g == 0.0);
  }

  SECTION("backward demands a scalar root") {
    Var vx(x, true);
    Var y = mul(vx, vx);
    REQUIRE_THROWS_AS(backward(y), ParamError);
  }
}

TEST_CASE("optimizers behave") {
  Rng rng(13);

  SECTION("sgd moves against the gradient") {
    Var p(Tensor::full(1, 1, 1, 2.0), true);
    Var loss = mean_all(mul(p, p));
    backward(loss);
    Sgd opt(0.1);
    opt.step({&p});
    REQUIRE(p.val().v[0] == Catch::Approx(2.0 - 0.1 * 4.0));
  }

  SECTION("adam with zero lr leaves params unchanged") {
    Var p(rnd(rng, 2, 2, 2), true);
    Tensor before = p.val();
    Var loss = mean_all(mul(p, p));
    backward(loss);
    Adam opt(0.0);
    opt.step({&p});
    REQUIRE(max_abs_diff(before, p.val()) == 0.0);
  }

  SECTION("adam converges on a quadratic") {
    Var p(Tensor::full(1, 1, 1, 5.0), true);
    Adam opt(0.2);
    for (int i = 0; i < 200; ++i) {
      zero_grads({&p});
      Var loss = mean_all(mul(p, p));
      backward(loss);
      opt.step({&p});
    }
    REQUIRE(std::abs(p.val().v[0]) < 1e-2);
  }
}

TEST_CASE("parameter checksums flag mutation") {
  Rng rng(14);
  Conv2d conv(2, 3, 3, 1, 1, rng);
  NamedParams named;
  conv.named_params("conv", named);
  uint64_t before = param_checksum(named);
  REQUIRE(param_checksum(named) == before);
  conv.W.value().v[0] += 1e-9;
  REQUIRE(param_checksum(named) != before);
}
