#include <doctest.h>

#include "lepp/curriculum.hpp"
#include "lepp/errors.hpp"
#include "lepp/random.hpp"

using namespace lepp;

namespace {

ScheduleSpec spec(ScheduleKind kind, double tau0, int N, int M, double p = 2.0)
{
    ScheduleSpec s;
    s.kind = kind;
    s.tau0 = tau0;
    s.epochs = N;
    s.max_horizon = M;
    s.p_exp = p;
    return s;
}

constexpr ScheduleKind kAll[] = {ScheduleKind::linear, ScheduleKind::poly, ScheduleKind::log};

}  // namespace

TEST_CASE("ratio endpoints and direct substitution")
{
    for (auto k : kAll) CHECK(schedule_ratio(spec(k, 0.37, 20, 10), 0) == 0.37);
    CHECK(schedule_ratio(spec(ScheduleKind::linear, 0.1, 30, 10), 30) == 1.0);
    CHECK(schedule_ratio(spec(ScheduleKind::poly, 0.0, 10, 10, 2.0), 5) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(schedule_ratio(spec(ScheduleKind::log, 0.3, 17, 10), 17) == 1.0);
    CHECK(schedule_ratio(spec(ScheduleKind::poly, 0.2, 9, 10, 0.3), 9) == 1.0);
}

TEST_CASE("horizon")
{
    for (auto k : kAll)
        for (int n = 0; n <= 12; ++n) CHECK(schedule_horizon(spec(k, 1.0, 12, 7), n) == 7);
    CHECK(schedule_horizon(spec(ScheduleKind::linear, 0.1, 30, 10), 0) == 1);
    CHECK(schedule_horizon(spec(ScheduleKind::linear, 0.0, 30, 10), 0) == 1);  // clamped up
    CHECK(schedule_horizon(spec(ScheduleKind::linear, 0.25, 4, 10), 0) == 3);  // 2.5 rounds up
}

TEST_CASE("errors")
{
    CHECK_THROWS_AS(schedule_ratio(spec(ScheduleKind::linear, 0.1, 10, 5), -1), ConfigError);
    CHECK_THROWS_AS(schedule_ratio(spec(ScheduleKind::linear, 0.1, 10, 5), 11), ConfigError);
    CHECK_THROWS_AS(schedule_ratio(spec(ScheduleKind::linear, 1.5, 10, 5), 0), ConfigError);
    CHECK_THROWS_AS(schedule_ratio(spec(ScheduleKind::poly, 0.1, 10, 5, 0.0), 0), ConfigError);
    CHECK_THROWS_AS(schedule_horizon(spec(ScheduleKind::log, 0.1, 10, 0), 0), ConfigError);
    CHECK_THROWS_AS(parse_schedule_kind("exp"), ConfigError);
    for (auto k : kAll) CHECK(parse_schedule_kind(to_string(k)) == k);
}

TEST_CASE("random specs: monotone, bounded, ordered")
{
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const double tau0 = rng.uniform();
        const int N = 1 + static_cast<int>(rng.below(200));
        const int M = 1 + static_cast<int>(rng.below(40));
        const double p = 1.0 + 1e-3 + rng.uniform(0.0, 4.0);
        for (auto k : kAll) {
            auto s = spec(k, tau0, N, M, k == ScheduleKind::poly ? rng.uniform(0.05, 5.0) : 2.0);
            double prev_r = -1.0;
            int prev_h = 0;
            for (int n = 0; n <= N; ++n) {
                const double r = schedule_ratio(s, n);
                const int h = schedule_horizon(s, n);
                CHECK(r >= prev_r);
                CHECK(h >= prev_h);
                CHECK(r >= tau0);
                CHECK(r <= 1.0);
                CHECK(h >= 1);
                CHECK(h <= M);
                prev_r = r;
                prev_h = h;
            }
            CHECK(schedule_ratio(s, N) == doctest::Approx(1.0).epsilon(1e-15));
        }
        for (int n = 1; n < N; ++n) {
            const double lg = schedule_ratio(spec(ScheduleKind::log, tau0, N, M), n);
            const double li = schedule_ratio(spec(ScheduleKind::linear, tau0, N, M), n);
            const double po = schedule_ratio(spec(ScheduleKind::poly, tau0, N, M, p), n);
            CHECK(lg >= li);
            CHECK(li >= po);
        }
    }
}
