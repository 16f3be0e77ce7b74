#include <doctest.h>

#include "jetjepa/autodiff.hpp"
#include "jetjepa/params.hpp"
#include "gradcheck.hpp"

using namespace jetjepa;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
    Mat m(r, c);
    for (auto& v : m.v) v = rng.gaussian(0.0, scale);
    return m;
}

// Build a ParamStore from named random matrices and gradient-check a scalar
// forward built on top of it.
void check_forward(const std::vector<std::pair<std::string, Mat>>& params,
                   const std::function<Tape::Id(Tape&, TapeParams&)>& forward,
                   double tol = 1e-7) {
    ParamStore store;
    for (const auto& [name, m] : params) store.add(name, m, false);

    auto run = [&]() {
        Tape tape;
        TapeParams tp(tape, store);
        return tape.val(forward(tape, tp))(0, 0);
    };

    Tape tape;
    TapeParams tp(tape, store);
    Tape::Id loss = forward(tape, tp);
    tape.backward(loss);
    GradMap grads;
    accumulate_grads(grads, tape);
    REQUIRE(grads.size() == params.size());

    const auto res = gradcheck::check_params(store, grads, run);
    CHECK_MESSAGE(res.max_rel_err < tol, "worst entry: ", res.worst);
}

} // namespace

TEST_CASE("tape: matmul forward matches hand computation") {
    Tape t;
    Mat a(2, 3), b(3, 2);
    for (int i = 0; i < 6; ++i) {
        a.v[static_cast<size_t>(i)] = i + 1;
        b.v[static_cast<size_t>(i)] = 2 * i - 3;
    }
    const Mat& out = t.val(t.matmul(t.constant(a), t.constant(b)));
    // row 0: [1,2,3] . cols of b
    CHECK(out(0, 0) == doctest::Approx(1 * -3 + 2 * 1 + 3 * 5));
    CHECK(out(0, 1) == doctest::Approx(1 * -1 + 2 * 3 + 3 * 7));
}

TEST_CASE("tape: gradients of every primitive against finite differences") {
    Rng rng(42);

    SUBCASE("linear + gelu chain") {
        check_forward({{"w", random_mat(rng, 4, 3, 0.5)},
                       {"b", random_mat(rng, 1, 4, 0.5)},
                       {"x", random_mat(rng, 5, 3, 1.0)}},
                      [](Tape& t, TapeParams& tp) {
                          Tape::Id h = t.linear(tp("x"), tp("w"), tp("b"));
                          h = t.gelu(h);
                          return t.smooth_l1_loss(h, Mat(5, 4, 0.3), 1.0);
                      });
    }

    SUBCASE("matmul and matmul_nt") {
        check_forward({{"a", random_mat(rng, 3, 4, 0.7)}, {"b", random_mat(rng, 4, 2, 0.7)}},
                      [](Tape& t, TapeParams& tp) {
                          return t.smooth_l1_loss(t.matmul(tp("a"), tp("b")), Mat(3, 2, -0.1), 1.0);
                      });
        check_forward({{"a", random_mat(rng, 3, 4, 0.7)}, {"b", random_mat(rng, 5, 4, 0.7)}},
                      [](Tape& t, TapeParams& tp) {
                          return t.smooth_l1_loss(t.matmul_nt(tp("a"), tp("b")), Mat(3, 5, 0.2), 1.0);
                      });
    }

    SUBCASE("softmax rows") {
        check_forward({{"x", random_mat(rng, 4, 6, 1.5)}}, [](Tape& t, TapeParams& tp) {
            return t.smooth_l1_loss(t.softmax_rows(tp("x")), Mat(4, 6, 0.1), 0.5);
        });
    }

    SUBCASE("layernorm rows") {
        check_forward({{"x", random_mat(rng, 4, 8, 1.0)},
                       {"gamma", random_mat(rng, 1, 8, 0.3)},
                       {"beta", random_mat(rng, 1, 8, 0.3)}},
                      [](Tape& t, TapeParams& tp) {
                          return t.smooth_l1_loss(t.layernorm_rows(tp("x"), tp("gamma"), tp("beta")),
                                                  Mat(4, 8, 0.0), 1.0);
                      });
    }

    SUBCASE("shape ops: slice/gather/concat/broadcast/pad/reshape") {
        check_forward({{"x", random_mat(rng, 6, 4, 1.0)}, {"y", random_mat(rng, 2, 4, 1.0)}},
                      [](Tape& t, TapeParams& tp) {
                          Tape::Id a = t.slice_rows(tp("x"), 1, 5);          // 4 x 4
                          Tape::Id b = t.gather_rows(tp("x"), {0, 0, 3, 5}); // 4 x 4 with repeats
                          Tape::Id c = t.add(a, b);
                          Tape::Id d = t.concat_rows(c, tp("y")); // 6 x 4
                          Tape::Id e = t.concat_cols({t.slice_cols(d, 0, 2), t.slice_cols(d, 2, 4)});
                          Tape::Id f = t.reshape(e, 4, 6);
                          return t.smooth_l1_loss(f, Mat(4, 6, 0.05), 1.0);
                      });
        check_forward({{"row", random_mat(rng, 1, 5, 1.0)}}, [](Tape& t, TapeParams& tp) {
            return t.smooth_l1_loss(t.broadcast_row(tp("row"), 7), Mat(7, 5, -0.2), 1.0);
        });
        check_forward({{"x", random_mat(rng, 3, 3, 1.0)}}, [](Tape& t, TapeParams& tp) {
            return t.smooth_l1_loss(t.pad_topleft(tp("x"), 2), Mat(5, 5, 0.1), 1.0);
        });
    }

    SUBCASE("pooling") {
        check_forward({{"x", random_mat(rng, 5, 4, 1.0)}}, [](Tape& t, TapeParams& tp) {
            Tape::Id mx = t.max_pool_rows(tp("x"));
            Tape::Id mn = t.mean_pool_rows(tp("x"));
            return t.smooth_l1_loss(t.concat_cols({mx, mn}), Mat(1, 8, 0.0), 1.0);
        });
    }

    SUBCASE("losses") {
        check_forward({{"x", random_mat(rng, 3, 4, 2.0)}}, [](Tape& t, TapeParams& tp) {
            return t.smooth_l1_loss(tp("x"), Mat(3, 4, 0.25), 0.7);
        });
        check_forward({{"logits", random_mat(rng, 1, 5, 1.0)}}, [](Tape& t, TapeParams& tp) {
            return t.softmax_xent(tp("logits"), 2);
        });
        check_forward({{"x", random_mat(rng, 2, 3, 1.0)}}, [](Tape& t, TapeParams& tp) {
            Tape::Id a = t.scale(tp("x"), 1.7);
            Tape::Id b = t.sub(a, tp("x"));
            return t.smooth_l1_loss(b, Mat(2, 3, 0.1), 1.0);
        });
    }
}

TEST_CASE("tape: constants receive no gradient and block propagation") {
    Rng rng(7);
    ParamStore store;
    store.add("w", random_mat(rng, 3, 3), false);

    Tape tape;
    TapeParams tp(tape, store);
    Tape::Id c = tape.constant(random_mat(rng, 2, 3));
    Tape::Id h = tape.linear(c, tp("w"));
    Tape::Id detached = tape.constant(tape.val(h)); // detach trick used by the teacher path
    Tape::Id loss = tape.smooth_l1_loss(detached, Mat(2, 3, 0.0), 1.0);
    tape.backward(loss);

    GradMap grads;
    accumulate_grads(grads, tape);
    CHECK(grads.empty()); // nothing reaches w through the detached copy
}

TEST_CASE("tape: gradient accumulates over reused nodes") {
    ParamStore store;
    Mat w(1, 1);
    w(0, 0) = 3.0;
    store.add("w", w, false);

    Tape tape;
    TapeParams tp(tape, store);
    Tape::Id x = tp("w");
    Tape::Id y = tape.add(x, x); // y = 2w
    Tape::Id loss = tape.smooth_l1_loss(y, Mat(1, 1, 0.0), 100.0); // quadratic region: (2w)^2/200
    tape.backward(loss);
    GradMap grads;
    accumulate_grads(grads, tape);
    CHECK(grads.at("w")(0, 0) == doctest::Approx(2.0 * 2.0 * 3.0 / 100.0));
}
