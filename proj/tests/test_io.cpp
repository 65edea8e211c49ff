#include <filesystem>

#include <gtest/gtest.h>

#include "aqse/io.hpp"

using namespace aqse;

namespace {

MeasurementCache synthetic_cache() {
    MeasurementCache c;
    c.sigma = 1.0;
    c.n_outcomes = 5;
    c.seed = 9;
    c.config_hash = "0123456789abcdef";
    for (double s : {0.25, 1.0, 3.5}) {
        GivensAngles a = GivensAngles::zeros(5);
        for (std::size_t i = 0; i < a.angles.size(); ++i) a.angles[i] = 0.1 * static_cast<double>(i) - s;
        CacheEntry e;
        e.theta2 = s;
        e.povm = povm_from_angles(a, {0.0, s});
        e.result.angles = a;
        e.result.value = 2.0 + 1.0 / (1.0 + s * s) + 1e-17;
        e.result.evals = 1234;
        e.result.converged = true;
        c.entries.push_back(e);
    }
    return c;
}

EnsembleRecord synthetic_ensemble() {
    EnsembleConfig cfg;
    cfg.theta_star = {0.1, 0.7};
    cfg.steps = 30;
    cfg.runs = 3;
    cfg.master_seed = 77;
    cfg.checkpoints = {10, 20, 30};
    std::vector<RunRecord> runs;
    for (std::size_t i = 0; i < 3; ++i) {
        RunRecord r;
        r.run_index = i;
        r.seed = run_seed(77, i);
        r.theta_star = cfg.theta_star;
        r.checkpoints = cfg.checkpoints;
        r.estimates = {{0.1 * i, 0.3}, {-0.005, 0.7 + 1e-3 * i}, {1.0 / 3.0, 0.72}};
        r.outcome_counts = {10, 5, 0, 15};
        if (i == 1) r.trajectory.assign(30, Theta{0.2, 0.6});
        runs.push_back(r);
    }
    return merge_runs(cfg, runs);
}

}  // namespace

TEST(Hash, KnownFnvVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
    EXPECT_EQ(hex64(0x1f), "000000000000001f");
    // Key order of the input does not matter.
    EXPECT_EQ(json_hash(Json::parse(R"({"b":1,"a":2})")), json_hash(Json::parse(R"({"a":2,"b":1})")));
    EXPECT_NE(json_hash(Json{{"a", 1}}), json_hash(Json{{"a", 2}}));
}

TEST(Povm, JsonRoundTripIsExact) {
    const MeasurementCache c = synthetic_cache();
    const RankOnePovm& p = c.entries[1].povm;
    const RankOnePovm q = povm_from_json(to_json(p, 1.0));
    EXPECT_EQ(q.anchor, p.anchor);
    EXPECT_EQ(q.vectors, p.vectors);
    EXPECT_EQ(q.angles, p.angles);

    Json broken = to_json(p, 1.0);
    broken["n"] = 4;
    EXPECT_THROW(povm_from_json(broken), Error);
}

TEST(CacheIo, RoundTripPreservesBytes) {
    const MeasurementCache c = synthetic_cache();
    const std::string text = dump_cache(c);
    const MeasurementCache back = cache_from_json(Json::parse(text));
    EXPECT_EQ(dump_cache(back), text);
    EXPECT_EQ(cache_checksum(back), cache_checksum(c));
    ASSERT_EQ(back.entries.size(), 3u);
    EXPECT_EQ(back.entries[0].result.value, c.entries[0].result.value);
    EXPECT_EQ(back.entries[2].povm.vectors, c.entries[2].povm.vectors);
    EXPECT_EQ(back.entries[2].result.angles.angles, c.entries[2].result.angles.angles);
    EXPECT_EQ(back.config_hash, c.config_hash);

    const auto dir = std::filesystem::temp_directory_path() / "aqse_test_io";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "cache.json").string();
    save_cache(c, path);
    EXPECT_EQ(read_file(path), text);
    EXPECT_EQ(dump_cache(load_cache(path)), text);
    std::filesystem::remove_all(dir);
}

TEST(CacheIo, RejectsIncompatibleOrMalformedFiles) {
    Json j = cache_to_json(synthetic_cache());
    auto kind = [](const Json& x) {
        try {
            cache_from_json(x);
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::InvalidArgument;
    };
    Json v = j;
    v["header"]["plane_ordering_version"] = 2;
    EXPECT_EQ(kind(v), ErrorKind::Io);
    Json unsorted = j;
    std::swap(unsorted["entries"][0], unsorted["entries"][1]);
    EXPECT_EQ(kind(unsorted), ErrorKind::Io);
    Json missing = j;
    missing["entries"][0].erase("value");
    EXPECT_EQ(kind(missing), ErrorKind::Io);
    Json empty = j;
    empty["entries"] = Json::array();
    EXPECT_EQ(kind(empty), ErrorKind::Io);
    EXPECT_THROW(load_cache("/nonexistent/aqse/cache.json"), Error);
}

TEST(RunsIo, RoundTrip) {
    const EnsembleRecord ens = synthetic_ensemble();
    const std::string text = dump_runs(ens, "feedfacefeedface", "0000000000000001", Json{{"grid", {{"wall", 0.02}}}});
    const RunFile f = parse_runs(text);
    EXPECT_EQ(f.ensemble.runs, ens.runs);
    EXPECT_EQ(f.header.at("config_hash"), "feedfacefeedface");
    EXPECT_EQ(f.header.at("cache_checksum"), "0000000000000001");
    EXPECT_EQ(f.header.at("grid").at("wall"), 0.02);
    EXPECT_EQ(f.ensemble.config.master_seed, 77u);
    EXPECT_EQ(f.ensemble.config.checkpoints, ens.config.checkpoints);
    EXPECT_EQ(f.ensemble.config.theta_star, ens.config.theta_star);
    EXPECT_EQ(dump_runs(f.ensemble, "feedfacefeedface", "0000000000000001", Json{{"grid", {{"wall", 0.02}}}}),
              text);
    // Only the run that kept its trajectory writes one.
    std::size_t hits = 0;
    for (std::size_t at = text.find("\"trajectory\""); at != std::string::npos; at = text.find("\"trajectory\"", at + 1))
        ++hits;
    EXPECT_EQ(hits, 1u);
}

TEST(RunsIo, RunOrderInFileDoesNotMatter) {
    const EnsembleRecord ens = synthetic_ensemble();
    std::string text = to_json(ens.runs[2]).dump() + "\n" + dump_runs(ens, "h", "c");
    const std::size_t last = text.rfind(to_json(ens.runs[2]).dump());
    text.erase(last, to_json(ens.runs[2]).dump().size() + 1);
    EXPECT_EQ(parse_runs(text).ensemble.runs, ens.runs);
}

TEST(RunsIo, RejectsMalformedFiles) {
    const EnsembleRecord ens = synthetic_ensemble();
    const std::string good = dump_runs(ens, "h", "c");
    auto kind = [](const std::string& t) {
        try {
            parse_runs(t);
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::DegenerateFit;
    };
    const std::string body = good.substr(good.find('\n') + 1);
    EXPECT_EQ(kind(body), ErrorKind::Io);
    EXPECT_EQ(kind(good + good.substr(0, good.find('\n') + 1)), ErrorKind::Io);
    EXPECT_EQ(kind(good + "{\"type\":\"mystery\"}\n"), ErrorKind::Io);
    EXPECT_EQ(kind(good + "{not json\n"), ErrorKind::Io);
    EXPECT_EQ(kind(good + to_json(ens.runs[0]).dump() + "\n"), ErrorKind::InvalidArgument);
}
