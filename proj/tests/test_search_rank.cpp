#include "doctest.h"

#include "pinas/error.hpp"
#include "pinas/search_rank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <unistd.h>

using namespace pinas;
using namespace pinas::search;
using space::ArchEncoding;

namespace {

space::SearchSpace toy() { return space::SearchSpace(space::make_chain_space(2, 8, 2, {"k3d1", "k3d2", "k1"}, {0}, true)); }

space::SearchSpace tiny_cell(std::vector<space::CellOp> ops) {
    space::CellSpace cs;
    cs.num_nodes = 3;
    cs.op_set = std::move(ops);
    return space::SearchSpace(cs);
}

// Pair counting written out independently of the library.
double brute_tau(const std::vector<double>& x, const std::vector<double>& y) {
    double c = 0, d = 0, tx = 0, ty = 0, n0 = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < i; ++j) {
            n0 += 1;
            const int sx = (x[i] > x[j]) - (x[i] < x[j]);
            const int sy = (y[i] > y[j]) - (y[i] < y[j]);
            tx += sx == 0;
            ty += sy == 0;
            if (sx * sy > 0) c += 1;
            if (sx * sy < 0) d += 1;
        }
    return (c - d) / std::sqrt((n0 - tx) * (n0 - ty));
}

// Deterministic made-up accuracy per architecture.
double fake_acc(const space::SearchSpace& sp, const ArchEncoding& a) {
    return static_cast<double>(splitmix64(space::arch_id(sp, a) + 17) % 1000) / 1000.0;
}

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("pinas_sr_" + std::to_string(::getpid()) + "_" + name)).string();
}

}  // namespace

TEST_CASE("kendall tau worked examples and errors") {
    CHECK(kendall_tau({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
    CHECK(kendall_tau({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(kendall_tau({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(kendall_tau({1, 2}, {1, 2, 3}), ContractError);
    CHECK_THROWS_AS(kendall_tau({1}, {1}), ContractError);
    CHECK_THROWS_AS(kendall_tau({2, 2, 2}, {1, 2, 3}), ContractError);
}

TEST_CASE("kendall tau invariances against pair counting") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        const int n = 2 + static_cast<int>(rng.below(15));
        std::vector<double> x(n), y(n);
        for (int i = 0; i < n; ++i) {
            x[i] = static_cast<double>(rng.below(6));
            y[i] = static_cast<double>(rng.below(6));
        }
        std::set<double> sx(x.begin(), x.end()), sy(y.begin(), y.end());
        if (sx.size() < 2 || sy.size() < 2) continue;
        const double tau = kendall_tau(x, y);
        CHECK(tau == doctest::Approx(brute_tau(x, y)).epsilon(1e-12));
        // Strictly monotone transforms keep the value; negation flips it.
        std::vector<double> ex(n), ny(n);
        for (int i = 0; i < n; ++i) {
            ex[i] = std::exp(x[i]) * 3 - 1;
            ny[i] = -y[i];
        }
        CHECK(kendall_tau(ex, y) == doctest::Approx(tau));
        CHECK(kendall_tau(x, ny) == doctest::Approx(-tau));
    }
}

TEST_CASE("trial records round-trip through JSONL") {
    const auto sp = toy();
    TrialRecord r{{{2, 1}, "chain"}, 0.625, 0.875, OracleSource::trained_oracle, 99, 4, "recipe x"};
    const TrialRecord back = from_jsonl(to_jsonl(r), sp);
    CHECK(back == r);
    TrialRecord bare{{{0, 0}, "chain"}, 0.1, std::nullopt, std::nullopt, 0, 0, ""};
    CHECK(from_jsonl(to_jsonl(bare), sp) == bare);

    const std::string path = tmp_path("records.jsonl");
    write_records(path, {r, bare});
    const auto rs = read_records(path, sp);
    REQUIRE(rs.size() == 2);
    CHECK(rs[0] == r);
    CHECK(rs[1] == bare);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(from_jsonl("{not json", sp), ConfigError);
    CHECK_THROWS_AS(from_jsonl(R"({"schema":2,"choices":[0,0],"est_acc":0.5,"space":"chain"})", sp), ConfigError);
    CHECK_THROWS(from_jsonl(R"({"schema":1,"choices":[0,7],"est_acc":0.5,"space":"chain","seed":0,"timestamp":0})", sp));
}

TEST_CASE("evaluate_candidates ordering and determinism") {
    const auto sp = toy();
    Evaluator eval = [&](const ArchEncoding& a) { return fake_acc(sp, a); };
    auto archs = space::enumerate(sp);

    const auto one = evaluate_candidates(eval, {archs[3]});
    REQUIRE(one.size() == 1);
    CHECK(one[0].est_acc >= 0.0);
    CHECK(one[0].est_acc <= 1.0);

    const auto dup = evaluate_candidates(eval, {archs[2], archs[2]});
    CHECK(dup[0].est_acc == dup[1].est_acc);

    const auto recs = evaluate_candidates(eval, archs);
    for (std::size_t i = 1; i < recs.size(); ++i) CHECK(recs[i - 1].est_acc >= recs[i].est_acc);
    std::vector<ArchEncoding> shuffled = archs;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto recs2 = evaluate_candidates(eval, shuffled);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(recs[i].arch == recs2[i].arch);
        CHECK(recs[i].est_acc == recs2[i].est_acc);
    }
}

TEST_CASE("evolutionary search contracts") {
    const auto sp = toy();
    int calls = 0;
    Evaluator eval = [&](const ArchEncoding& a) {
        ++calls;
        return fake_acc(sp, a);
    };

    SUBCASE("budget covering the space finds the exhaustive argmax") {
        Rng rng(1);
        const auto res = evolutionary_search(sp, eval, {20, 4, 2, 1}, rng);
        CHECK(res.trials.size() == 9);
        double best = -1;
        for (const auto& a : space::enumerate(sp)) best = std::max(best, fake_acc(sp, a));
        CHECK(res.best.est_acc == best);
    }
    SUBCASE("budget 1 evaluates one random architecture") {
        Rng rng(7), ref(7);
        const auto res = evolutionary_search(sp, eval, {1, 0, 4, 1}, rng);
        REQUIRE(res.trials.size() == 1);
        CHECK(res.best.arch == space::sample_uniform(sp, ref));
        CHECK(calls == 1);
    }
    SUBCASE("fixed seed gives the same trial sequence, all reported archs evaluated") {
        space::SearchSpace big(space::make_chain_space(2, 8, 4, {"k3d1", "k3d2", "k1"}, {0}, true));
        Evaluator e2 = [&](const ArchEncoding& a) { return fake_acc(big, a); };
        Rng r1(3), r2(3);
        const auto a = evolutionary_search(big, e2, {30, 8, 3, 1}, r1);
        const auto b = evolutionary_search(big, e2, {30, 8, 3, 1}, r2);
        REQUIRE(a.trials.size() == 30);
        CHECK(a.trials == b.trials);
        std::set<std::uint64_t> ids;
        for (const auto& t : a.trials) ids.insert(space::arch_id(big, t.arch));
        CHECK(ids.size() == 30);
        CHECK(ids.count(space::arch_id(big, a.best.arch)) == 1);
    }
    SUBCASE("population larger than the budget is rejected") {
        Rng rng(1);
        CHECK_THROWS_AS(evolutionary_search(sp, eval, {4, 8, 2, 1}, rng), ConfigError);
    }
}

TEST_CASE("oracle training chance level and determinism") {
    // Classes differ in overall brightness of the first channel.
    data::Dataset train, test;
    Rng rng(5);
    auto fill = [&](data::Dataset& ds, int n) {
        ds.images = Tensor({n, 2, 8, 8});
        ds.num_classes = 2;
        for (int i = 0; i < n; ++i) {
            const int y = i % 2;
            ds.labels.push_back(y);
            for (int c = 0; c < 2; ++c)
                for (int h = 0; h < 8; ++h)
                    for (int w = 0; w < 8; ++w)
                        ds.images.at(i, c, h, w) =
                            static_cast<float>(std::clamp(0.3 + 0.4 * y * (c == 0) + 0.1 * rng.normal(), 0.0, 1.0));
        }
        ds.source_indices.resize(n);
        std::iota(ds.source_indices.begin(), ds.source_indices.end(), 0);
    };
    fill(train, 256);
    fill(test, 400);
    const auto sp = toy();
    OracleConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 32;
    cfg.norm_mean = {0.5f};
    cfg.norm_std = {0.25f};
    const ArchEncoding arch{{1, 2}, "chain"};
    const double chance = train_oracle(sp, 2, arch, train, test, cfg, 1);
    CHECK(std::abs(chance - 0.5) < 3 * std::sqrt(0.25 / 400));
    cfg.epochs = 30;
    const double a = train_oracle(sp, 2, arch, train, test, cfg, 1);
    CHECK(a > 0.9);
    CHECK(train_oracle(sp, 2, arch, train, test, cfg, 1) == a);
}

TEST_CASE("ranking report and ranking set") {
    const auto sp = toy();
    std::vector<TrialRecord> recs;
    for (const auto& a : space::enumerate(sp)) {
        TrialRecord r;
        r.arch = a;
        r.est_acc = fake_acc(sp, a);
        r.oracle_acc = 0.5 + r.est_acc / 4;  // perfect predictor
        recs.push_back(r);
    }
    const auto rep = ranking_report(sp, recs);
    CHECK(rep.tau == doctest::Approx(1.0));
    CHECK(rep.n == 9);
    CHECK(rep.scatter.size() == 9);
    CHECK_THROWS_AS(ranking_report(sp, recs, [](const ArchEncoding&) { return false; }), ContractError);

    Rng rng(8);
    std::vector<double> e, o;
    for (auto& r : recs) {
        r.oracle_acc = rng.uniform();
        e.push_back(r.est_acc);
        o.push_back(*r.oracle_acc);
    }
    CHECK(ranking_report(sp, recs).tau == doctest::Approx(kendall_tau(e, o)));
    recs[0].oracle_acc.reset();
    CHECK_THROWS_AS(ranking_report(sp, recs), ContractError);

    // Small space: everything. Larger: 5 best searched plus 8 distinct others.
    Rng r1(2);
    CHECK(ranking_set(sp, {}, 5, 8, r1).size() == 9);
    space::SearchSpace big(space::make_chain_space(2, 8, 4, {"k3d1", "k3d2", "k1"}, {0}, true));
    std::vector<TrialRecord> searched;
    for (int i = 0; i < 20; ++i) {
        TrialRecord r;
        r.arch = space::arch_from_id(big, static_cast<std::uint64_t>(i * 3));
        r.est_acc = i / 20.0;
        searched.push_back(r);
    }
    const auto set = ranking_set(big, searched, 5, 8, r1);
    REQUIRE(set.size() == 13);
    std::set<std::uint64_t> ids;
    for (const auto& a : set) ids.insert(space::arch_id(big, a));
    CHECK(ids.size() == 13);
    for (int i = 15; i < 20; ++i) CHECK(ids.count(static_cast<std::uint64_t>(i * 3)) == 1);
}

TEST_CASE("candidate evaluator repeats itself") {
    const auto sp = toy();
    supernet::Supernet net(sp, 3, 16);
    const ParameterStore bb = net.make_store(3);
    data::SyntheticSpec spec;
    spec.num_classes = 3;
    spec.train_per_class = 24;
    spec.test_per_class = 24;
    spec.image_size = 8;
    spec.offset = 2.0;
    const auto calib = data::make_synthetic(spec, 1, data::Split::train);
    const auto val = data::make_synthetic(spec, 1, data::Split::test);
    const linear::LinearHead head = linear::init_head(net, 4);
    CandidateEvaluator a(net, bb, head, calib, val, {0.1f}, {0.2f}, 32);
    CandidateEvaluator b(net, bb, head, calib, val, {0.1f}, {0.2f}, 32);
    const auto archs = space::enumerate(sp);
    const auto ra = evaluate_candidates(a.as_function(), archs);
    std::vector<ArchEncoding> rev(archs.rbegin(), archs.rend());
    const auto rb = evaluate_candidates(b.as_function(), rev);
    for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].arch == rb[i].arch);
        CHECK(ra[i].est_acc == rb[i].est_acc);
    }
    CHECK(a.evaluations() == 9);
    CHECK(a(archs[4]) == b(archs[4]));
    CHECK(a.evaluations() == 9);
}

TEST_CASE("benchmark table file format") {
    const auto sp = tiny_cell({space::CellOp::conv3x3, space::CellOp::skip});
    std::map<std::string, double> m;
    for (const auto& a : space::enumerate(sp)) m[space::to_string(sp, a)] = fake_acc(sp, a);
    const BenchmarkTable t(m);
    const std::string path = tmp_path("table.txt");
    t.save(path);
    const auto back = BenchmarkTable::load(path);
    CHECK(back.entries() == t.entries());
    CHECK_THROWS_WITH_AS(back.lookup("|none~0|+|none~0|none~1|"), doctest::Contains("|none~0|+|none~0|none~1|"), ContractError);

    auto write = [&](const std::string& text) {
        std::ofstream(path, std::ios::trunc) << text;
    };
    write("# comment\n|a| 0.5\n\n|b| 0.25 # trailing\n");
    CHECK(BenchmarkTable::load(path).size() == 2);
    write("|a| 0.5\n|b|\n");
    CHECK_THROWS_WITH_AS(BenchmarkTable::load(path), doctest::Contains(":2:"), IngestionError);
    write("|a| 1.5\n");
    CHECK_THROWS_AS(BenchmarkTable::load(path), IngestionError);
    write("|a| 0.5\n|a| 0.6\n");
    CHECK_THROWS_WITH_AS(BenchmarkTable::load(path), doctest::Contains("duplicate"), IngestionError);
    std::filesystem::remove(path);
}

TEST_CASE("skip sensitivity against hand enumeration") {
    using space::CellOp;
    const auto sp = tiny_cell({CellOp::conv3x3, CellOp::conv1x1, CellOp::skip});
    const auto all = space::enumerate(sp);
    REQUIRE(all.size() == 27);
    std::map<std::string, double> m;
    std::vector<TrialRecord> recs;
    for (const auto& a : all) {
        m[space::to_string(sp, a)] = fake_acc(sp, a);
        TrialRecord r;
        r.arch = a;
        r.est_acc = fake_acc(sp, a) / 2 + 0.1;
        recs.push_back(r);
    }
    const BenchmarkTable table(m);

    // Hand list: every (arch, edge) holding conv3x3, swapped to skip.
    const int conv3 = 0, skip = 2;
    std::vector<std::pair<std::string, std::string>> expect;
    for (const auto& a : all)
        for (int e = 0; e < 3; ++e)
            if (a.choices[e] == conv3) {
                ArchEncoding v = a;
                v.choices[e] = skip;
                expect.push_back({space::to_string(sp, a), space::to_string(sp, v)});
            }
    const auto changes = skip_sensitivity(sp, recs, table, CellOp::conv3x3);
    REQUIRE(changes.size() == expect.size());
    for (std::size_t i = 0; i < changes.size(); ++i) {
        CHECK(changes[i].arch == expect[i].first);
        CHECK(changes[i].variant == expect[i].second);
        CHECK(changes[i].d_actual == doctest::Approx(m[expect[i].second] - m[expect[i].first]));
        CHECK(changes[i].d_est == doctest::Approx((m[expect[i].second] - m[expect[i].first]) / 2));
    }

    // Variant estimates from a separate pool: only the listed archs are substituted.
    const std::vector<TrialRecord> one{recs[5]};
    const auto few = skip_sensitivity(sp, one, table, CellOp::conv3x3, CellOp::skip, recs);
    CHECK(few.size() == substitutions(sp, recs[5].arch, CellOp::conv3x3, CellOp::skip).size());
    for (const auto& c : few) CHECK(c.arch == space::to_string(sp, recs[5].arch));
    CHECK_THROWS_AS(skip_sensitivity(sp, {recs[0], recs[5]}, table, CellOp::conv3x3, CellOp::skip, one), ContractError);

    for (const auto& c : skip_sensitivity(sp, recs, table, CellOp::skip, CellOp::skip)) {
        CHECK(c.d_est == 0.0);
        CHECK(c.d_actual == 0.0);
    }
    std::map<std::string, double> flat;
    for (const auto& [k, v] : m) flat[k] = 0.7;
    for (const auto& c : skip_sensitivity(sp, recs, BenchmarkTable(flat), CellOp::conv1x1)) CHECK(c.d_actual == 0.0);

    std::map<std::string, double> holey = m;
    holey.erase(expect[0].second);
    CHECK_THROWS_WITH(skip_sensitivity(sp, recs, BenchmarkTable(holey), CellOp::conv3x3),
                      doctest::Contains(expect[0].second.c_str()));

    const std::vector<SkipChange> hand = {{"a", "b", 0, 0.005, -0.02}, {"a", "c", 1, -0.009, 0.01},
                                          {"d", "e", 0, 0.02, -0.5}, {"f", "g", 2, 0.0, -0.04}};
    const auto q = threshold_query(hand, 0.01);
    CHECK(q.count == 3);
    CHECK(q.actual_drops == 2);
    CHECK(q.mean_d_actual == doctest::Approx((-0.02 + 0.01 - 0.04) / 3));
}

#ifdef PINAS_CONVERTER
TEST_CASE("converter output loads as a benchmark table") {
    const space::SearchSpace sp{space::CellSpace{}};
    const auto all = space::enumerate(sp);
    const std::string csv = tmp_path("nb.csv"), out = tmp_path("nb.txt");
    std::map<std::string, double> expect;
    {
        std::ofstream f(csv);
        f << "arch,accuracy\n";
        for (std::size_t i = 0; i < all.size(); i += 97) {
            const std::string key = space::to_string(sp, all[i]);
            const double pct = 10.0 + static_cast<double>(i % 8000) / 100.0;  // percent, as exported
            f << key << "," << pct << "\n";
            expect[key] = pct / 100.0;
        }
    }
    const std::string cmd = std::string(PINAS_PYTHON) + " " + PINAS_CONVERTER + " " + csv + " " + out + " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    const auto t = BenchmarkTable::load(out);
    REQUIRE(t.size() == expect.size());
    for (const auto& [k, v] : expect) CHECK(t.lookup(k) == doctest::Approx(v).epsilon(1e-12));

    std::ofstream(csv, std::ios::trunc) << "arch,accuracy\n|conv~0|+|none~0|none~1|+|none~0|none~1|none~2|,50\n";
    CHECK(std::system(cmd.c_str()) != 0);
    std::filesystem::remove(csv);
    std::filesystem::remove(out);
}
#endif
