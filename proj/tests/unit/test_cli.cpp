#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "hatemtl/workspace.hpp"

using namespace hatemtl;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

class CliWorkspace {
public:
    CliWorkspace() { fixtures::write_workspace(dir_.path(), HATEMTL_LEXICON, 5); }

    Result run(std::vector<std::string> args) const {
        std::vector<std::string> full{"-c", (dir_ / "workspace.json").string(), "--out", (dir_ / "out").string(),
                                      "--run-id", "t", "--epochs", "1", "--runs", "1", "--folds", "2"};
        full.insert(full.end(), args.begin(), args.end());
        std::ostringstream out;
        std::ostringstream err;
        Result r;
        r.code = run_cli(full, out, err);
        r.out = out.str();
        r.err = err.str();
        return r;
    }

    fs::path run_dir() const { return dir_ / "out" / "t"; }
    fs::path root() const { return dir_.path(); }

    nlohmann::json read(const fs::path& rel) const {
        std::ifstream in(run_dir() / rel);
        REQUIRE(in.good());
        return nlohmann::json::parse(in);
    }

private:
    fixtures::TempDir dir_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("usage errors exit 2") {
    std::ostringstream out;
    std::ostringstream err;
    CHECK(run_cli({}, out, err) == 2);
    CHECK(run_cli({"frobnicate"}, out, err) == 2);
    CHECK(run_cli({"train", "--mode", "joint"}, out, err) == 2);
    CHECK(run_cli({"--help"}, out, err) == 0);
}

TEST_CASE("ingest reports class counts and records the manifest") {
    CliWorkspace ws;
    const Result r = ws.run({"ingest"});
    REQUIRE(r.code == 0);
    const auto j = ws.read("ingest.json");
    CHECK(j["tasks"]["d1"]["distribution"]["hateful"] == 60);
    CHECK(j["tasks"]["d1"]["distribution"]["abusive"] == 50);
    CHECK(j["tasks"]["d1"]["distribution"]["neutral"] == 130);
    CHECK(j["tasks"]["d2"]["distribution"]["sexism"] == 55);
    CHECK(r.out.find("d2") != std::string::npos);
    const auto manifest = ws.read("manifest.json");
    CHECK(manifest["run_id"] == "t");
    CHECK(manifest["commands"].size() == 1);
    CHECK(manifest["config_hash"].get<std::string>().size() == 64);
}

TEST_CASE("configuration problems exit 2 and name the cause") {
    CliWorkspace ws;
    SUBCASE("missing users file") {
        fs::remove(ws.root() / "data" / "d2_users.jsonl");
        const Result r = ws.run({"ingest"});
        CHECK(r.code == 2);
        CHECK(r.err.find("d2_users.jsonl") != std::string::npos);
    }
    SUBCASE("unknown config key") {
        auto j = nlohmann::json::parse(slurp(ws.root() / "workspace.json"));
        j["learning_rat"] = 0.1;
        std::ofstream(ws.root() / "workspace.json") << j.dump();
        const Result r = ws.run({"ingest"});
        CHECK(r.code == 2);
        CHECK(r.err.find("learning_rat") != std::string::npos);
    }
    SUBCASE("invalid override") {
        CHECK(ws.run({"--encoder", "lstm", "ingest"}).code == 2);
        CHECK(ws.run({"--folds", "1", "split"}).code == 2);
    }
    SUBCASE("fuse before train") {
        const Result r = ws.run({"fuse", "--mask", "all"});
        CHECK(r.code == 2);
        CHECK(r.err.find("model.ckpt") != std::string::npos);
    }
}

TEST_CASE("split writes disjoint folds per task") {
    CliWorkspace ws;
    REQUIRE(ws.run({"split"}).code == 0);
    const auto j = ws.read("splits/d2.json");
    REQUIRE(j["folds"].size() == 2);
    std::set<std::string> tested;
    for (const auto& f : j["folds"]) {
        for (const auto& id : f["test"]) CHECK(tested.insert(id.get<std::string>()).second);
    }
    CHECK(tested.size() == 160);
}

TEST_CASE("train stl writes loadable checkpoints and deterministic events") {
    CliWorkspace ws;
    REQUIRE(ws.run({"train", "--mode", "stl"}).code == 0);
    const fs::path dir = ws.run_dir() / "train" / "stl-cnn";
    const Checkpoint ck = load_checkpoint(dir / "d1.ckpt");
    CHECK(ck.heads.size() == 1);
    CHECK(ck.heads[0].task == "d1");
    const std::string first = slurp(dir / "events.jsonl");
    CHECK_FALSE(first.empty());
    REQUIRE(ws.run({"train", "--mode", "stl"}).code == 0);
    CHECK(slurp(dir / "events.jsonl") == first);
    const auto manifest = ws.read("manifest.json");
    CHECK(manifest["commands"].size() == 2);
}

TEST_CASE("report merges the run's JSON outputs") {
    CliWorkspace ws;
    REQUIRE(ws.run({"ingest"}).code == 0);
    REQUIRE(ws.run({"split"}).code == 0);
    REQUIRE(ws.run({"report"}).code == 0);
    const auto j = ws.read("report.json");
    CHECK(j["count"] == j["entries"].size());
    std::set<std::string> paths;
    for (const auto& e : j["entries"]) paths.insert(e["path"].get<std::string>());
    // Splits are inputs to later commands, not reports.
    CHECK(paths == std::set<std::string>{"ingest.json"});
}

TEST_CASE("train mtl lists one head per task; evaluate writes aggregates and error cases") {
    CliWorkspace ws;
    REQUIRE(ws.run({"train", "--mode", "mtl"}).code == 0);
    const auto m = read_checkpoint_manifest(ws.run_dir() / "train" / "mtl-cnn" / "model.ckpt");
    REQUIRE(m["heads"].size() == 2);
    const Result r = ws.run({"evaluate", "--pipeline", "mtl"});
    REQUIRE(r.code == 0);
    const auto agg = ws.read("evaluate/mtl/aggregate.json");
    CHECK(agg["tasks"].contains("d1"));
    CHECK(agg["tasks"]["d2"]["entries"].size() == 2);
    CHECK(fs::exists(ws.run_dir() / "evaluate" / "mtl" / "errors" / "d1.jsonl"));
    CHECK(fs::exists(ws.run_dir() / "evaluate" / "mtl" / "jobs" / "run0-fold1.json"));
}

TEST_CASE("config hash ignores key order and tracks every value") {
    fixtures::TempDir dir;
    fixtures::write_workspace(dir.path(), HATEMTL_LEXICON, 5);
    const auto j = nlohmann::json::parse(slurp(dir / "workspace.json"));
    const auto base = WorkspaceConfig::from_json(j, dir.path());
    nlohmann::ordered_json reordered;
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) reordered[*it] = j[*it];
    CHECK(WorkspaceConfig::from_json(nlohmann::json::parse(reordered.dump()), dir.path()).config_hash() ==
          base.config_hash());
    auto changed = j;
    changed["seed"] = j["seed"].get<int>() + 1;
    CHECK(WorkspaceConfig::from_json(changed, dir.path()).config_hash() != base.config_hash());
    WorkspaceConfig tweak = base;
    tweak.training.adam.beta2 = 0.99;
    CHECK(tweak.config_hash() != base.config_hash());
}
