#include "doctest.h"

#include <cmath>

#include "stlm/gradcheck.hpp"
#include "stlm/ops.hpp"
#include "stlm/rng.hpp"

using namespace stlm;

namespace {

template <typename S>
TensorPtr<S> randn(Shape shape, Rng& rng, double stddev = 1.0) {
    auto t = make_tensor<S>(std::move(shape));
    for (auto& v : t->values) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
}

template <typename S>
struct Tol {
    static constexpr double eps = 1e-3;
    static constexpr double max_err = 1e-3;
};
template <>
struct Tol<double> {
    static constexpr double eps = 1e-5;
    static constexpr double max_err = 1e-6;
};

} // namespace

TEST_CASE("matmul basics") {
    Tape<float> tape;
    auto eye = tensor_of<float>({2, 2}, {1, 0, 0, 1});
    auto m = tensor_of<float>({2, 2}, {1, 2, 3, 4});
    auto out = matmul(tape, eye, m);
    CHECK(out->values == std::vector<float>({1, 2, 3, 4}));

    auto row = tensor_of<float>({1, 2}, {1, 0});
    auto col = tensor_of<float>({2, 1}, {5, 7});
    CHECK(matmul(tape, row, col)->values == std::vector<float>({5}));

    auto bad = tensor_of<float>({3, 1}, {1, 2, 3});
    CHECK_THROWS_AS(matmul(tape, row, bad), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(tape, row, bad),
                         doctest::Contains("[1 x 2]"), ShapeError);
}

TEST_CASE("matmul backward matches explicit rule") {
    Rng rng(7);
    auto a = randn<double>({3, 4}, rng);
    auto b = randn<double>({4, 2}, rng);
    a->requires_grad = b->requires_grad = true;
    Tape<double> tape;
    auto out = matmul(tape, a, b);
    auto loss = sum(tape, out);
    tape.backward(loss);
    // dL/da = ones * b^T, dL/db = a^T * ones
    MatrixRM<double> ones = MatrixRM<double>::Ones(3, 2);
    MatrixRM<double> da = ones * b->mat().transpose();
    MatrixRM<double> db = a->mat().transpose() * ones;
    for (Index i = 0; i < 12; ++i) CHECK(a->grad[i] == doctest::Approx(da(i / 4, i % 4)));
    for (Index i = 0; i < 8; ++i) CHECK(b->grad[i] == doctest::Approx(db(i / 2, i % 2)));
}

TEST_CASE("softmax rows") {
    Tape<float> tape;
    auto x = tensor_of<float>({1, 4}, {0, 0, 0, 0});
    auto p = softmax_rows(tape, x);
    for (float v : p->values) CHECK(v == doctest::Approx(0.25));

    auto extreme = tensor_of<float>({1, 2}, {1000.0f, 0.0f});
    auto q = softmax_rows(tape, extreme);
    CHECK(q->values[0] == doctest::Approx(1.0));
    CHECK(q->values[1] == doctest::Approx(0.0));

    Rng rng(3);
    auto r = randn<float>({5, 9}, rng, 3.0);
    auto pr = softmax_rows(tape, r);
    for (Index row = 0; row < 5; ++row) {
        float s = 0;
        for (Index c = 0; c < 9; ++c) {
            const float v = pr->values[static_cast<size_t>(row * 9 + c)];
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("cross entropy values") {
    Tape<float> tapef;
    for (int v : {2, 256}) {
        auto logits = make_tensor<float>({3, v});
        std::vector<int> targets{0, v / 2, v - 1};
        auto loss = cross_entropy(tapef, logits, targets);
        CHECK(loss->values[0] == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-6));
    }
    Tape<double> taped;
    for (int v : {2, 256, 50257}) {
        auto logits = make_tensor<double>({2, v});
        std::vector<int> targets{1, v - 1};
        auto loss = cross_entropy(taped, logits, targets);
        CHECK(loss->values[0] == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-9));
    }

    // one-hot-favoring logits
    auto logits = make_tensor<float>({1, 11});
    logits->values[3] = 1e4f;
    auto loss = cross_entropy(tapef, logits, std::vector<int>{3});
    CHECK(loss->values[0] == doctest::Approx(0.0).epsilon(1e-6));

    CHECK_THROWS_AS(cross_entropy(tapef, logits, std::vector<int>{11}), IndexError);
    CHECK_THROWS_AS(cross_entropy(tapef, logits, std::vector<int>{-2}), IndexError);

    // PAD positions are excluded from the mean
    auto two = tensor_of<float>({2, 2}, {0, 0, 100, 0});
    auto l = cross_entropy(tapef, two, std::vector<int>{0, -1}, -1);
    CHECK(l->values[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK_THROWS_AS(cross_entropy(tapef, two, std::vector<int>{-1, -1}, -1), DataError);
}

TEST_CASE("grad_check frozen cases") {
    Rng rng(11);
    auto fd_matmul = [](Tape<float>& t, const std::vector<TensorPtr<float>>& in) {
        return matmul(t, in[0], in[1]);
    };
    double err = grad_check<float>(fd_matmul, {randn<float>({2, 3}, rng), randn<float>({3, 2}, rng)}, 1e-3);
    CHECK(err < 1e-3);

    auto fd_softmax = [](Tape<double>& t, const std::vector<TensorPtr<double>>& in) {
        // weighting makes the reduction sensitive to every Jacobian entry
        auto w = tensor_of<double>({1, 7}, {0.9, -0.3, 1.7, 0.2, -1.1, 0.5, 2.0});
        return mul(t, softmax_rows(t, in[0]), w);
    };
    err = grad_check<double>(fd_softmax, {randn<double>({1, 7}, rng)}, 1e-5);
    CHECK(err < 1e-6);

    auto constant = [](Tape<float>& t, const std::vector<TensorPtr<float>>&) {
        return tensor_of<float>({1}, {4.5f});
    };
    CHECK(grad_check<float>(constant, {randn<float>({2, 2}, rng)}, 1e-3) == 0.0);

    CHECK_THROWS_AS(grad_check<float>(fd_matmul,
                                      {randn<float>({2, 2}, rng), randn<float>({2, 2}, rng)}, 0.5),
                    ConfigError);
}

TEST_CASE("cross entropy gradient vs finite differences") {
    Rng rng(5);
    auto fn = [](Tape<float>& t, const std::vector<TensorPtr<float>>& in) {
        return cross_entropy(t, in[0], std::vector<int>{1, 4, 10, 0, 7});
    };
    CHECK(grad_check<float>(fn, {randn<float>({5, 11}, rng)}, 1e-3) < 1e-3);
}

template <typename S>
static void sweep_all_ops() {
    Rng rng(42);
    const double eps = Tol<S>::eps;
    const double tol = Tol<S>::max_err;
    using In = std::vector<TensorPtr<S>>;

    for (int trial = 0; trial < 20; ++trial) {
        const Index m = 1 + static_cast<Index>(rng.below(4));
        const Index k = 1 + static_cast<Index>(rng.below(4));
        const Index n = 1 + static_cast<Index>(rng.below(4));
        const Index nb = 1 + static_cast<Index>(rng.below(3));

        auto fd = [&](auto fn, In ins) {
            const double err = grad_check<S>(fn, ins, eps);
            CAPTURE(trial);
            CHECK(err < tol);
        };

        fd([](Tape<S>& t, const In& in) { return add(t, in[0], in[1]); },
           {randn<S>({m, n}, rng), randn<S>({m, n}, rng)});
        fd([](Tape<S>& t, const In& in) { return sub(t, in[0], in[1]); },
           {randn<S>({m, n}, rng), randn<S>({m, n}, rng)});
        fd([](Tape<S>& t, const In& in) { return mul(t, in[0], in[1]); },
           {randn<S>({m, n}, rng), randn<S>({m, n}, rng)});
        fd([](Tape<S>& t, const In& in) { return scale(t, in[0], -1.7); }, {randn<S>({m, n}, rng)});
        fd([](Tape<S>& t, const In& in) { return add_bias(t, in[0], in[1]); },
           {randn<S>({m, n}, rng), randn<S>({n}, rng)});
        fd([](Tape<S>& t, const In& in) { return matmul(t, in[0], in[1]); },
           {randn<S>({m, k}, rng), randn<S>({k, n}, rng)});
        fd([](Tape<S>& t, const In& in) { return matmul_nt(t, in[0], in[1]); },
           {randn<S>({m, k}, rng), randn<S>({n, k}, rng)});
        fd([](Tape<S>& t, const In& in) { return bmm(t, in[0], in[1]); },
           {randn<S>({nb, m, k}, rng), randn<S>({nb, k, n}, rng)});
        fd([](Tape<S>& t, const In& in) { return bmm_nt(t, in[0], in[1]); },
           {randn<S>({nb, m, k}, rng), randn<S>({nb, n, k}, rng)});
        fd([m, n](Tape<S>& t, const In& in) { return reshape(t, in[0], {n, m}); },
           {randn<S>({m, n}, rng)});
        fd([](Tape<S>& t, const In& in) { return rows(t, in[0], {0, 0}); }, {randn<S>({m, n}, rng)});
        fd([n](Tape<S>& t, const In& in) { return slice_cols(t, in[0], 0, n); },
           {randn<S>({m, n + 1}, rng)});
        fd([](Tape<S>& t, const In& in) { return concat_cols(t, {in[0], in[1]}); },
           {randn<S>({m, n}, rng), randn<S>({m, k}, rng)});
        fd([](Tape<S>& t, const In& in) { return concat_rows(t, {in[0], in[1]}); },
           {randn<S>({m, n}, rng), randn<S>({k, n}, rng)});
        fd([](Tape<S>& t, const In& in) {
            auto w = make_tensor<S>(in[0]->shape);
            for (size_t i = 0; i < w->values.size(); ++i)
                w->values[i] = static_cast<S>(0.1) * static_cast<S>(i % 7) - static_cast<S>(0.2);
            return mul(t, softmax_rows(t, in[0]), w);
        },
           {randn<S>({m, n + 1}, rng)});
        fd([n](Tape<S>& t, const In& in) {
            std::vector<int> targets(static_cast<size_t>(in[0]->dim(0)));
            for (size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i) % static_cast<int>(n + 1);
            return cross_entropy(t, in[0], targets);
        },
           {randn<S>({m, n + 1}, rng)});
        fd([](Tape<S>& t, const In& in) { return rmsnorm(t, in[0], in[1]); },
           {randn<S>({m, n}, rng), randn<S>({n}, rng)});
        fd([](Tape<S>& t, const In& in) { return silu(t, in[0]); }, {randn<S>({m, n}, rng)});
        fd([](Tape<S>& t, const In& in) { return gelu(t, in[0]); }, {randn<S>({m, n}, rng)});
        fd([](Tape<S>& t, const In& in) {
            auto w = make_tensor<S>(in[0]->shape);
            for (size_t i = 0; i < w->values.size(); ++i)
                w->values[i] = static_cast<S>(i % 5) * static_cast<S>(0.3) - static_cast<S>(0.4);
            return mul(t, rope(t, in[0]), w);
        },
           {randn<S>({m, 2 * k}, rng)});
        fd([](Tape<S>& t, const In& in) { return sum(t, in[0]); }, {randn<S>({m, n}, rng)});
    }
}

TEST_CASE("all ops pass finite-difference sweep at f32") { sweep_all_ops<float>(); }
TEST_CASE("all ops pass finite-difference sweep at f64") { sweep_all_ops<double>(); }

TEST_CASE("tape visits each node exactly once") {
    Rng rng(9);
    auto a = randn<float>({4, 4}, rng);
    a->requires_grad = true;
    Tape<float> tape;
    auto h = matmul(tape, a, a);
    auto y = add(tape, h, h); // h consumed twice: gradient must accumulate before h's node runs
    auto loss = sum(tape, y);
    tape.backward(loss);
    for (int visits : tape.visit_counts()) CHECK(visits == 1);

    // add used h twice, so dL/dh = 2 and dL/da picks up both paths
    auto a2 = randn<float>({4, 4}, rng);
    auto fn = [](Tape<float>& t, const std::vector<TensorPtr<float>>& in) {
        auto hh = matmul(t, in[0], in[0]);
        return add(t, hh, hh);
    };
    CHECK(grad_check<float>(fn, {a2}, 1e-3) < 1e-3);
}

TEST_CASE("non-finite values are surfaced, not propagated") {
    Tape<float> tape;
    auto big = tensor_of<float>({1, 2}, {3e38f, 3e38f});
    CHECK_THROWS_AS(add(tape, big, big), NumericError);
    auto x = tensor_of<float>({1, 1}, {std::numeric_limits<float>::quiet_NaN()});
    auto one = tensor_of<float>({1, 1}, {1.0f});
    CHECK_THROWS_AS(mul(tape, x, one), NumericError);
}

TEST_CASE("rope rotation") {
    Tape<float> tape;
    // position 0 is the identity
    auto x = tensor_of<float>({1, 4}, {1, 2, 3, 4});
    auto y = rope(tape, x);
    for (size_t i = 0; i < 4; ++i) CHECK(y->values[i] == doctest::Approx(x->values[i]));

    // d=2, t=1, theta_0 = 1: (1,0) -> (cos 1, sin 1)
    auto unit = tensor_of<float>({2, 2}, {1, 0, 1, 0});
    auto r = rope(tape, unit);
    CHECK(r->values[2] == doctest::Approx(std::cos(1.0)));
    CHECK(r->values[3] == doctest::Approx(std::sin(1.0)));

    CHECK_THROWS_AS(rope(tape, tensor_of<float>({1, 3}, {1, 2, 3})), ConfigError);
}

TEST_CASE("rope attention depends only on relative position") {
    Rng rng(21);
    const Index d = 8;
    auto q = randn<double>({1, d}, rng);
    auto k = randn<double>({1, d}, rng);
    Tape<double> tape;

    auto dot_at = [&](Index t1, Index t2) {
        auto rq = rope(tape, q, t1);
        auto rk = rope(tape, k, t2);
        double s = 0;
        for (Index i = 0; i < d; ++i) s += rq->values[static_cast<size_t>(i)] * rk->values[static_cast<size_t>(i)];
        return s;
    };

    const double base = dot_at(5, 2);
    for (Index shift : {1, 7, 40, 333}) {
        CHECK(std::abs(dot_at(5 + shift, 2 + shift) - base) < 1e-5);
    }
}

TEST_CASE("dropout") {
    Rng rng(1);
    auto x = full_like_shape<float>({10, 10}, 1.0f);
    x->requires_grad = true;
    Tape<float> tape;

    auto same = dropout(tape, x, 0.0, rng, true);
    CHECK(same.get() == x.get()); // identity, no randomness consumed

    auto dropped = dropout(tape, x, 0.5, rng, true);
    int zeros = 0;
    for (float v : dropped->values) {
        CHECK((v == 0.0f || v == 2.0f)); // inverted scaling by 1/(1-p)
        zeros += v == 0.0f;
    }
    CHECK(zeros > 20);
    CHECK(zeros < 80);

    auto eval_mode = dropout(tape, x, 0.5, rng, false);
    CHECK(eval_mode.get() == x.get());

    CHECK_THROWS_AS(dropout(tape, x, 1.0, rng, true), ConfigError);
}
