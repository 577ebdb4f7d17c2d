#include <doctest.h>

#include <cmath>

#include "structgp/rng.hpp"

using structgp::Philox;

TEST_SUITE("rng") {

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST_CASE("philox 4x32-10 known-answer vectors") {
    auto out = Philox::block({0u, 0u, 0u, 0u}, {0u, 0u});
    CHECK(out[0] == 0x6627e8d5u);
    CHECK(out[1] == 0xe169c58du);
    CHECK(out[2] == 0xbc57ac4cu);
    CHECK(out[3] == 0x9b00dbd8u);

    out = Philox::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                        {0xffffffffu, 0xffffffffu});
    CHECK(out[0] == 0x408f276du);
    CHECK(out[1] == 0x41c83b0eu);
    CHECK(out[2] == 0xa20bc7c6u);
    CHECK(out[3] == 0x6d5451fdu);

    out = Philox::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                        {0xa4093822u, 0x299f31d0u});
    CHECK(out[0] == 0xd16cfe09u);
    CHECK(out[1] == 0x94fdccebu);
    CHECK(out[2] == 0x5001e420u);
    CHECK(out[3] == 0x24126ea1u);
}

TEST_CASE("seeded streams are reproducible and distinct") {
    Philox a(42), b(42), c(43), d(42, 1);
    for (int i = 0; i < 100; ++i) CHECK(a() == b());
    bool differ_seed = false, differ_stream = false;
    Philox a2(42);
    for (int i = 0; i < 100; ++i) {
        const auto va = a2();
        if (va != c()) differ_seed = true;
        if (va != d()) differ_stream = true;
    }
    CHECK(differ_seed);
    CHECK(differ_stream);
}

TEST_CASE("normal and uniform moments") {
    Philox rng(7);
    const int n = 200000;
    double su = 0, su2 = 0, sn = 0, sn2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        su += u;
        su2 += u * u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(su2 / n - 0.25 == doctest::Approx(1.0 / 12).epsilon(0.05));
    CHECK(sn / n == doctest::Approx(0.0).epsilon(0.02));
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("gamma sampler matches shape/rate moments") {
    Philox rng(11);
    const double shape = 3.0, rate = 2.0;
    const int n = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gamma(shape, rate);
        s += g;
        s2 += g * g;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(mean == doctest::Approx(shape / rate).epsilon(0.02));
    CHECK(var == doctest::Approx(shape / (rate * rate)).epsilon(0.05));
}

}  // TEST_SUITE
