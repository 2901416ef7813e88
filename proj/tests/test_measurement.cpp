#include <gtest/gtest.h>

#include <sstream>

#include "psf/measurement.hpp"

#include "oracles.hpp"

using namespace psf;

TEST(BuildMeasurementTensor, VmagSliceIsIdentityBlockOnBusCoords) {
    GridTopology topo;
    topo.bus_count = 2;
    topo.lines = {{1, 2}};
    const MeasurementTensor mt =
        build_measurement_tensor(topo, 1, {ChannelKind::vmag2});
    ASSERT_EQ(mt.labels.size(), 2u);
    ASSERT_EQ(mt.h.d3, 2u);
    // bus-1 slice: ones at (real_1, real_1) and (imag_1, imag_1), i.e.
    // positions (1,1) and (3,3) 1-based; zeros elsewhere.
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            const double want = (i == j && (i == 0 || i == 2)) ? 1.0 : 0.0;
            EXPECT_EQ(mt.h.at(i, j, 0), want) << i << "," << j;
        }
}

TEST(BuildMeasurementTensor, DeterministicInSeed) {
    const GridTopology topo = ring_topology(4);
    const MeasurementTensor a = build_measurement_tensor(topo, 31);
    const MeasurementTensor b = build_measurement_tensor(topo, 31);
    ASSERT_EQ(a.h.data.size(), b.h.data.size());
    for (std::size_t i = 0; i < a.h.data.size(); ++i) EXPECT_EQ(a.h.data[i], b.h.data[i]);
}

TEST(BuildMeasurementTensor, FullChannelCountIsThreeKPlusFourLines) {
    const GridTopology topo = ring_topology(3); // 3 lines
    const MeasurementTensor mt = build_measurement_tensor(topo, 5);
    // Count per channel group, mirroring the measurement vector definition.
    std::size_t vmag = 0, pinj = 0, qinj = 0, lines = 0;
    for (const ChannelLabel& lab : mt.labels) {
        switch (lab.kind) {
            case ChannelKind::vmag2: ++vmag; break;
            case ChannelKind::p_inj: ++pinj; break;
            case ChannelKind::q_inj: ++qinj; break;
            default: ++lines; break;
        }
    }
    EXPECT_EQ(vmag, 3u);
    EXPECT_EQ(pinj, 3u);
    EXPECT_EQ(qinj, 3u);
    EXPECT_EQ(lines, 4u * 3u);
    EXPECT_EQ(mt.labels.size(), 3u + 3u + 3u + 4u * 3u);
    EXPECT_EQ(mt.h.d3, mt.labels.size());
}

TEST(BuildMeasurementTensor, EverySliceExactlySymmetric) {
    const GridTopology topo = ring_topology(5);
    const MeasurementTensor mt = build_measurement_tensor(topo, 17);
    for (std::size_t k = 0; k < mt.h.d3; ++k)
        for (std::size_t i = 0; i < mt.h.d1; ++i)
            for (std::size_t j = 0; j < mt.h.d2; ++j)
                EXPECT_EQ(mt.h.at(i, j, k), mt.h.at(j, i, k));
}

TEST(BuildMeasurementTensor, EntriesWithinUnitInterval) {
    const GridTopology topo = ring_topology(4);
    const MeasurementTensor mt = build_measurement_tensor(topo, 23);
    for (double v : mt.h.data) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Measure, NoiselessEqualsQuadraticFormExactly) {
    const GridTopology topo = ring_topology(3);
    const MeasurementTensor mt = build_measurement_tensor(topo, 9);
    Rng rng(4);
    Vector x(6);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const Vector z = measure(mt, x, 0.0, 77);
    const Vector want = mode_product_quadratic(mt.h, x);
    ASSERT_EQ(z.size(), want.size());
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], want[i]);
}

TEST(Measure, ZeroStateNoNoiseIsZero) {
    const GridTopology topo = ring_topology(2);
    const MeasurementTensor mt = build_measurement_tensor(topo, 2);
    const Vector z = measure(mt, Vector(4, 0.0), 0.0, 1);
    for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(Measure, NoiseMeanConcentratesAroundNoiselessValue) {
    const GridTopology topo = ring_topology(2);
    const MeasurementTensor mt = build_measurement_tensor(topo, 13);
    Rng rng(5);
    Vector x(4);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const Vector clean = mode_product_quadratic(mt.h, x);

    const int draws = 10000;
    const double sigma = 0.01;
    std::vector<double> mean(clean.size(), 0.0);
    for (int i = 0; i < draws; ++i) {
        const Vector z = measure(mt, x, sigma, 1000 + i);
        for (std::size_t j = 0; j < z.size(); ++j) mean[j] += z[j];
    }
    const double tol = 3.0 * sigma / std::sqrt(static_cast<double>(draws));
    for (std::size_t j = 0; j < clean.size(); ++j)
        EXPECT_NEAR(mean[j] / draws, clean[j], tol) << "channel " << j;
}

TEST(GenerateStateSeries, DeterministicInSeed) {
    const GridTopology topo = ring_topology(3);
    const StateSeries a = generate_state_series(topo, 50, 8, SeriesProfile::sinusoidal_load);
    const StateSeries b = generate_state_series(topo, 50, 8, SeriesProfile::sinusoidal_load);
    ASSERT_EQ(a.steps(), b.steps());
    for (std::size_t t = 0; t < a.steps(); ++t)
        for (std::size_t i = 0; i < a.state_dim(); ++i)
            EXPECT_EQ(a.states[t][i], b.states[t][i]);
}

TEST(GenerateStateSeries, ShapeContract) {
    const GridTopology topo = ring_topology(6);
    const StateSeries s = generate_state_series(topo, 2000, 7, SeriesProfile::sinusoidal_load);
    EXPECT_EQ(s.steps(), 2000u);
    EXPECT_EQ(s.state_dim(), 12u);
    for (const Vector& x : s.states) ASSERT_EQ(x.size(), 12u);
}

TEST(GenerateStateSeries, SinusoidalMagnitudesStayNearOne) {
    const GridTopology topo = ring_topology(4);
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const StateSeries s =
            generate_state_series(topo, 3000, seed, SeriesProfile::sinusoidal_load);
        double lo = 1e300, hi = -1e300;
        for (const Vector& x : s.states)
            for (std::size_t b = 0; b < 4; ++b) {
                const double mag = std::hypot(x[b], x[4 + b]);
                lo = std::min(lo, mag);
                hi = std::max(hi, mag);
            }
        EXPECT_GE(lo, 0.85);
        EXPECT_LE(hi, 1.15);
    }
}

TEST(GenerateStateSeries, RandomWalkIsFiniteAndBounded) {
    const GridTopology topo = ring_topology(3);
    const StateSeries s = generate_state_series(topo, 1000, 21, SeriesProfile::random_walk);
    for (const Vector& x : s.states)
        for (double v : x) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_LE(std::abs(v), 1.2);
        }
}

TEST(StateSeriesCsv, RoundTripsLosslessly) {
    const GridTopology topo = ring_topology(3);
    const StateSeries s = generate_state_series(topo, 40, 12, SeriesProfile::sinusoidal_load);
    std::stringstream ss;
    write_state_series_csv(s, ss);
    const StateSeries back = read_state_series_csv(ss);
    ASSERT_EQ(back.bus_count, s.bus_count);
    ASSERT_EQ(back.steps(), s.steps());
    for (std::size_t t = 0; t < s.steps(); ++t)
        for (std::size_t i = 0; i < s.state_dim(); ++i)
            EXPECT_EQ(back.states[t][i], s.states[t][i]);
}

TEST(StateSeriesCsv, CorruptRowNamesLineNumber) {
    std::stringstream ss;
    ss << "t,x_r_1,x_i_1\n0,1.0,0.0\n1,oops,0.0\n";
    try {
        read_state_series_csv(ss, "test.csv");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line_number, 3u);
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(StateSeriesCsv, WrongColumnCountRejected) {
    std::stringstream ss;
    ss << "t,x_r_1,x_i_1\n0,1.0\n";
    EXPECT_THROW(read_state_series_csv(ss), ParseError);
}

TEST(GridTopology, RejectsSelfLoopsAndDuplicates) {
    GridTopology topo;
    topo.bus_count = 3;
    topo.lines = {{1, 1}};
    EXPECT_THROW(topo.validate(), ValueError);
    topo.lines = {{1, 2}, {1, 2}};
    EXPECT_THROW(topo.validate(), ValueError);
    topo.bus_count = 1;
    topo.lines = {};
    EXPECT_THROW(topo.validate(), ValueError);
}
