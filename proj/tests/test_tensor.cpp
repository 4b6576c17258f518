#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "galu/tensor.hpp"

using namespace galu;

TEST_CASE("circ_add follows the 1-based wrap rule") {
    CHECK(circ_add(1, 0, 4) == 1);
    CHECK(circ_add(3, 2, 4) == 1);
    CHECK(circ_add(4, 3, 4) == 3);
    CHECK(circ_add(2, 2, 4) == 4);
    CHECK_THROWS_AS(circ_add(0, 0, 4), std::invalid_argument);
    CHECK_THROWS_AS(circ_add(5, 0, 4), std::invalid_argument);
    CHECK_THROWS_AS(circ_add(1, 4, 4), std::invalid_argument);
    CHECK_THROWS_AS(circ_add(1, -1, 4), std::invalid_argument);
}

TEST_CASE("rotate shifts coordinates with wrap-around") {
    const Tensor x({4}, {1, 2, 3, 4});
    const Tensor r1 = rotate(x, 1);
    CHECK(r1[0] == 2);
    CHECK(r1[1] == 3);
    CHECK(r1[2] == 4);
    CHECK(r1[3] == 1);

    const Tensor single = rotate(Tensor({1}, {5}), 0);
    CHECK(single[0] == 5);

    const Tensor r3 = rotate(x, 3);
    CHECK(r3[0] == 4);
    CHECK(r3[1] == 1);
    CHECK(r3[2] == 2);
    CHECK(r3[3] == 3);
}

TEST_CASE("rotate is a bijection") {
    RngStream rng(1, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 1 + rng.uniform_int(8);
        Tensor x({d});
        for (int i = 0; i < d; ++i) x[i] = rng.gaussian();
        const int r = rng.uniform_int(d);
        const Tensor back = rotate(rotate(x, r), (d - r) % d);
        for (int i = 0; i < d; ++i) CHECK(back[i] == x[i]);
    }
}

TEST_CASE("circular convolution matches hand-worked cases") {
    SUBCASE("identity kernel") {
        const Tensor z({1, 4}, {1, 0, 0, 0});
        const Tensor k({2, 1, 1}, {1, 0});
        const Tensor out = conv1d_circular(z, k);
        CHECK(out.at2(0, 0) == 1);
        CHECK(out.at2(0, 1) == 0);
        CHECK(out.at2(0, 2) == 0);
        CHECK(out.at2(0, 3) == 0);
    }
    SUBCASE("self plus right neighbour") {
        const Tensor z({1, 4}, {1, 2, 3, 4});
        const Tensor k({2, 1, 1}, {1, 1});
        const Tensor out = conv1d_circular(z, k);
        CHECK(out.at2(0, 0) == 3);
        CHECK(out.at2(0, 1) == 5);
        CHECK(out.at2(0, 2) == 7);
        CHECK(out.at2(0, 3) == 5);
    }
    SUBCASE("window must stay below the spatial size") {
        const Tensor z({1, 2}, {1, 2});
        const Tensor k({2, 1, 1}, {1, 1});
        CHECK_THROWS_AS(conv1d_circular(z, k), std::invalid_argument);
    }
    SUBCASE("channel mismatch rejected") {
        const Tensor z({2, 4});
        const Tensor k({2, 1, 1}, {1, 1});
        CHECK_THROWS_AS(conv1d_circular(z, k), std::invalid_argument);
    }
}

TEST_CASE("circular convolution commutes with channel rotation") {
    RngStream rng(2, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 4 + rng.uniform_int(4);
        const int c_in = 1 + rng.uniform_int(2);
        const int c_out = 1 + rng.uniform_int(2);
        Tensor z({c_in, d});
        for (int i = 0; i < z.size(); ++i) z[i] = rng.gaussian();
        Tensor k({2, c_in, c_out});
        for (int i = 0; i < k.size(); ++i) k[i] = rng.gaussian();
        const int r = 2 % d;
        const Tensor lhs = conv1d_circular(rotate_channels(z, r), k);
        const Tensor rhs = rotate_channels(conv1d_circular(z, k), r);
        for (int i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));
    }
}

TEST_CASE("global average pool") {
    const Tensor a({1, 2}, {2, 4});
    CHECK(global_average_pool(a)[0] == 3);

    const Tensor zeros({1, 4});
    CHECK(global_average_pool(zeros)[0] == 0);

    const Tensor two({2, 4}, {1, 2, 3, 4, 4, 4, 4, 4});
    const Tensor p = global_average_pool(two);
    CHECK(p[0] == 2.5);
    CHECK(p[1] == 4.0);
}

TEST_CASE("max pool over contiguous windows") {
    const Tensor a({1, 4}, {1, 3, 2, 0});
    const Tensor pa = max_pool_1d(a, 2);
    CHECK(pa.at2(0, 0) == 3);
    CHECK(pa.at2(0, 1) == 2);

    const Tensor b({1, 4}, {5, 5, 5, 5});
    CHECK(max_pool_1d(b, 4).at2(0, 0) == 5);

    const Tensor c({1, 2}, {-1, -2});
    CHECK(max_pool_1d(c, 2).at2(0, 0) == -1);

    CHECK_THROWS_AS(max_pool_1d(a, 3), std::invalid_argument);
}

TEST_CASE("rng streams replay and separate") {
    RngStream a(123, 7), b(123, 7);
    for (int i = 0; i < 10000; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c(123, 8);
    int differ = 0;
    RngStream a2(123, 7);
    for (int i = 0; i < 64; ++i) differ += a2.next_u64() != c.next_u64();
    CHECK(differ > 60);

    RngStream u(9, 1);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("tensor construction checks shapes") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({0}), std::invalid_argument);
    const Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.all_finite());
}
