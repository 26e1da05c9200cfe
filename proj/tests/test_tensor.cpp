#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "unlearn/autodiff.hpp"
#include "unlearn/checkpoint.hpp"
#include "unlearn/nn.hpp"
#include "unlearn/rng.hpp"
#include "unlearn/tensor.hpp"

using namespace unlearn;

TEST_CASE("tensor construction and invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.all_finite());
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ContractViolation);
    CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0}).scalar_value(), ContractViolation);
    CHECK(Tensor::scalar(3.5).scalar_value() == 3.5);
}

TEST_CASE("backward: gradient of a sum is all-ones") {
    Graph g;
    Value x = g.leaf(Tensor({2, 3}, {1, -2, 3, 4, 0.5, -1}), true);
    g.backward(g.sum(x));
    for (double v : g.grad(x).vec()) CHECK(v == 1.0);
}

TEST_CASE("backward: d(x^2)/dx at x=3 is 6") {
    Graph g;
    Value x = g.leaf(Tensor::scalar(3.0), true);
    g.backward(g.mul(x, x));
    CHECK(g.grad(x)[0] == Catch::Approx(6.0).margin(1e-15));
}

TEST_CASE("backward: sigmoid gradient at 0 is 0.25") {
    Graph g;
    Value z = g.leaf(Tensor::scalar(0.0), true);
    g.backward(g.sigmoid(z));
    CHECK(g.grad(z)[0] == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("backward: non-scalar root rejected") {
    Graph g;
    Value x = g.leaf(Tensor({2}, {1.0, 2.0}), true);
    CHECK_THROWS_AS(g.backward(x), ContractViolation);
}

TEST_CASE("backward: unreachable leaves keep zero gradients") {
    Graph g;
    Value x = g.leaf(Tensor::scalar(2.0), true);
    Value y = g.leaf(Tensor::scalar(5.0), true);
    g.backward(g.square(x));
    CHECK(g.grad(y)[0] == 0.0);
}

TEST_CASE("backward: determinism across repeated sweeps") {
    Rng rng(7);
    Tensor t({4, 4});
    for (double& v : t.vec()) v = rng.normal();
    Graph g;
    Value x = g.leaf(t, true);
    Value root = g.mean(g.square(g.tanh(x)));
    g.backward(root);
    Tensor g1 = g.grad(x);
    g.backward(root);
    Tensor g2 = g.grad(x);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("backward: linearity of gradients") {
    Rng rng(11);
    Tensor t({3, 3});
    for (double& v : t.vec()) v = rng.normal();

    Graph g;
    Value x = g.leaf(t, true);
    Value a = g.sum(g.square(x));
    Value b = g.sum(g.exp(g.scale(x, 0.3)));

    g.backward(a);
    Tensor ga = g.grad(x);
    g.backward(b);
    Tensor gb = g.grad(x);
    g.backward(g.add(a, b));
    Tensor gsum = g.grad(x);
    for (std::size_t i = 0; i < gsum.size(); ++i) {
        CHECK(gsum[i] == Catch::Approx(ga[i] + gb[i]).margin(1e-12));
    }
}

TEST_CASE("elementwise broadcasting: scalar and row") {
    Graph g;
    Value x = g.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
    Value s = g.leaf(Tensor::scalar(2.0), true);
    Value r = g.leaf(Tensor({2}, {10.0, 20.0}), true);

    Value xs = g.mul(x, s);
    CHECK(xs.val().at(1, 1) == 8.0);
    Value xr = g.add(x, r);
    CHECK(xr.val().at(0, 0) == 11.0);
    CHECK(xr.val().at(1, 1) == 24.0);

    g.backward(g.sum(g.mul(xr, xr)));
    // d/dr sums over the batch rows.
    CHECK(g.grad(r)[0] == Catch::Approx(2 * 11.0 + 2 * 13.0).margin(1e-12));
    CHECK(g.grad(r)[1] == Catch::Approx(2 * 22.0 + 2 * 24.0).margin(1e-12));
}

TEST_CASE("matmul forward and gradient") {
    Graph g;
    Value a = g.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
    Value b = g.leaf(Tensor({2, 1}, {5, 6}), true);
    Value c = g.matmul(a, b);
    CHECK(c.val().at(0, 0) == 17.0);
    CHECK(c.val().at(1, 0) == 39.0);
    g.backward(g.sum(c));
    CHECK(g.grad(a)[0] == 5.0);
    CHECK(g.grad(a)[1] == 6.0);
    CHECK(g.grad(b)[0] == 4.0);  // 1 + 3
    CHECK(g.grad(b)[1] == 6.0);  // 2 + 4
    CHECK_THROWS_AS(g.matmul(b, b), ContractViolation);
}

TEST_CASE("concat and slice round-trip with gradients") {
    Graph g;
    Value a = g.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
    Value b = g.leaf(Tensor({2, 1}, {9, 8}), true);
    Value c = g.concat(a, b);
    CHECK(c.val().cols() == 3);
    CHECK(c.val().at(0, 2) == 9.0);
    Value back = g.slice(c, 0, 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(back.val()[i] == a.val()[i]);
    g.backward(g.sum(g.square(g.slice(c, 2, 3))));
    CHECK(g.grad(b)[0] == 18.0);
    CHECK(g.grad(a)[0] == 0.0);
    CHECK_THROWS_AS(g.slice(c, 2, 5), ContractViolation);
}

TEST_CASE("clamp: pass-through gradient inside, zero outside") {
    Graph g;
    Value x = g.leaf(Tensor({3}, {-2.0, 0.5, 2.0}), true);
    Value c = g.clamp(x, -1.0, 1.0);
    CHECK(c.val()[0] == -1.0);
    CHECK(c.val()[1] == 0.5);
    CHECK(c.val()[2] == 1.0);
    g.backward(g.sum(g.square(c)));
    CHECK(g.grad(x)[0] == 0.0);
    CHECK(g.grad(x)[1] == 1.0);
    CHECK(g.grad(x)[2] == 0.0);
}

TEST_CASE("grad_check: quadratic is exact to roundoff") {
    const double err = grad_check(
        [](Graph& g, Value x) { return g.sum(g.square(x)); }, Tensor::scalar(1.0), 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("grad_check: constant function has zero gradients") {
    ParamSet p;
    p.add("x", Tensor::scalar(0.7));
    Graph g;
    BoundParams bp = bind(g, p);
    g.backward(g.constant(4.0));
    CHECK(g.grad(bp.leaves[0])[0] == 0.0);
    const double err = grad_check(
        [](Graph& g2, const BoundParams&) { return g2.constant(4.0); }, p, 1e-5);
    CHECK(err < 1e-12);
}

TEST_CASE("grad_check: two-layer tanh MSE under 1e-5") {
    Rng rng(3);
    Mlp mlp = Mlp::make({3, 8, 2}, rng);
    Tensor x({4, 3}), y({4, 2});
    for (double& v : x.vec()) v = rng.normal();
    for (double& v : y.vec()) v = rng.normal();
    const double err = grad_check(
        [&](Graph& g, const BoundParams& bp) {
            Value pred = mlp.forward(g, bp, g.constant(x));
            return g.mean(g.square(g.sub(pred, g.constant(y))));
        },
        mlp.params, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE("grad_check: softplus/sigmoid/exp/log/sqrt composite") {
    Rng rng(5);
    ParamSet p;
    Tensor t({2, 3});
    for (double& v : t.vec()) v = 0.5 + std::abs(rng.normal());
    p.add("x", t);
    const double err = grad_check(
        [](Graph& g, const BoundParams& bp) {
            Value x = bp.leaves[0];
            Value u = g.add(g.softplus(x), g.sigmoid(x));
            return g.sum(g.log(g.add(g.sqrt(g.exp(u)), g.constant(1.0))));
        },
        p, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamSet p;
    p.add("w", Tensor({2}, {1.5, -0.5}));
    AdamState st = AdamState::make(p, 0.1);
    apply_adam(p, {Tensor({2})}, st);
    CHECK(p.values[0][0] == 1.5);
    CHECK(p.values[0][1] == -0.5);
    CHECK(st.step == 1);
}

TEST_CASE("adam: first step magnitude is ~lr * sign(g)") {
    ParamSet p;
    p.add("w", Tensor({2}, {0.0, 0.0}));
    AdamState st = AdamState::make(p, 0.01);
    apply_adam(p, {Tensor({2}, {3.0, -0.2})}, st);
    // mhat = g, vhat = g^2  =>  update = lr * g / (|g| + eps)
    CHECK(p.values[0][0] == Catch::Approx(-0.01).epsilon(1e-6));
    CHECK(p.values[0][1] == Catch::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam: second step with constant gradient is smaller") {
    ParamSet p;
    p.add("w", Tensor({1}, {0.0}));
    AdamState st = AdamState::make(p, 0.01);
    Tensor g({1}, {2.0});
    apply_adam(p, {g}, st);
    const double step1 = -p.values[0][0];
    apply_adam(p, {g}, st);
    const double step2 = -p.values[0][0] - step1;
    CHECK(step2 < step1);
    CHECK(step2 > 0.0);
}

TEST_CASE("adam: shape mismatch rejected") {
    ParamSet p;
    p.add("w", Tensor({2}));
    AdamState st = AdamState::make(p, 0.01);
    CHECK_THROWS_AS(apply_adam(p, {Tensor({3})}, st), ContractViolation);
}

TEST_CASE("checkpoint: byte round-trip preserves names, shapes, values") {
    Rng rng(42);
    Mlp mlp = Mlp::make({4, 6, 2}, rng, "net");
    std::stringstream ss;
    save_checkpoint(ss, mlp.params);
    ParamSet back = load_checkpoint(ss);
    REQUIRE(back.count() == mlp.params.count());
    for (std::size_t i = 0; i < back.count(); ++i) {
        CHECK(back.names[i] == mlp.params.names[i]);
        REQUIRE(back.values[i].same_shape(mlp.params.values[i]));
        for (std::size_t j = 0; j < back.values[i].size(); ++j) {
            CHECK(back.values[i][j] == mlp.params.values[i][j]);
        }
    }
}

TEST_CASE("checkpoint: bad magic and truncation rejected") {
    std::stringstream bad("XXXX garbage");
    CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
    Rng rng(1);
    Mlp mlp = Mlp::make({2, 2}, rng);
    std::stringstream ss;
    save_checkpoint(ss, mlp.params);
    std::string bytes = ss.str();
    std::stringstream cut(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(cut), FormatError);
}

TEST_CASE("checkpoint: restore_into matches by name and validates shapes") {
    Rng rng(9);
    Mlp a = Mlp::make({3, 4}, rng, "m");
    Mlp b = Mlp::make({3, 4}, rng, "m");
    restore_into(b.params, a.params);
    for (std::size_t j = 0; j < a.params.values[0].size(); ++j) {
        CHECK(b.params.values[0][j] == a.params.values[0][j]);
    }
    Mlp c = Mlp::make({4, 4}, rng, "m");
    CHECK_THROWS_AS(restore_into(c.params, a.params), FormatError);
    Mlp d = Mlp::make({3, 4}, rng, "other");
    CHECK_THROWS_AS(restore_into(d.params, a.params), FormatError);
}

TEST_CASE("rng substreams are independent of each other") {
    RngPool pool(123);
    Rng a1 = pool.stream("a");
    Rng b = pool.stream("b");
    (void)b.normal();
    Rng a2 = pool.stream("a");
    CHECK(a1.normal() == a2.normal());
    CHECK(hash_stream(1, "x") != hash_stream(1, "y"));
    CHECK(hash_stream(1, "x") != hash_stream(2, "x"));
}
