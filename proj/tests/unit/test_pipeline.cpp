#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kgdial/error.hpp"
#include "kgdial/pipeline.hpp"
#include "tiny_pipeline.hpp"

using namespace kgdial;
using kgdial::testing::tiny_pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "kgdial_test_pipeline";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CandidateResponse cand(const std::string& sample, const std::string& model, const std::string& text, Real beam) {
  return {sample, model, split_whitespace(text), beam, beam};
}

}  // namespace

TEST_CASE("entity files") {
  EntityMap m;
  m.add(split_whitespace("Red Sky"), "movie");
  m.add(split_whitespace("Liu Ying"), "person");
  const auto path = scratch("entities.tsv");
  write_entities(path, m);
  const EntityMap back = read_entities(path);
  CHECK(back.entries() == m.entries());

  write_file(path, "movie\tRed Sky\n\n   \nperson\tLiu  Ying\n");
  CHECK(read_entities(path).entries() == m.entries());

  write_file(path, "movie Red Sky\n");
  CHECK_THROWS_AS(read_entities(path), FormatError);
  write_file(path, "movie\t \n");
  CHECK_THROWS_AS(read_entities(path), FormatError);
  write_file(path, "movie\tRed Sky\nplanet\tMars\n");
  try {
    read_entities(path);
    FAIL("no throw");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  fs::remove(path);
  CHECK_THROWS_AS(read_entities(path), IoError);
}

TEST_CASE("bundle round trip") {
  const auto& p = tiny_pipeline();
  const ModelBundle& b = p.models[1];
  const auto path = scratch("b.ckpt");
  save_bundle(path, b);
  const ModelBundle back = load_bundle(path);
  CHECK(back.id == "B");
  CHECK(back.vocab == b.vocab);
  CHECK(back.recipe.same_operators(b.recipe));
  CHECK(back.recipe.name == b.recipe.name);
  CHECK(back.max_source_length == b.max_source_length);
  CHECK(back.beam.beam_size == 3);
  CHECK(back.beam.max_length == 8);

  // the checkpoint stores f32, so the reloaded bundle writes the same bytes
  const auto again = scratch("b2.ckpt");
  save_bundle(again, back);
  CHECK(read_file(again) == read_file(path));
  const ModelBundle twice = load_bundle(again);
  for (const auto& s : p.dev) CHECK(decode_sample(twice, s, p.entities, 3) == decode_sample(back, s, p.entities, 3));

  save_model(again, b.model);
  CHECK_THROWS_AS(load_bundle(again), FormatError);
  fs::remove(path);
  fs::remove(again);
}

TEST_CASE("decoding one sample") {
  const auto& p = tiny_pipeline();
  for (const auto& m : p.models) {
    const auto& s = p.dev[0];
    const auto three = decode_sample(m, s, p.entities, 3);
    REQUIRE(three.size() == 3);
    const auto one = decode_sample(m, s, p.entities, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == three[0]);
    for (std::size_t i = 0; i < three.size(); ++i) {
      CHECK(three[i].sample_id == s.id);
      CHECK(three[i].model_id == m.id);
      CHECK_FALSE(three[i].tokens.empty());
      if (i) CHECK(three[i - 1].beam_score >= three[i].beam_score);
    }
    CHECK_THROWS_AS(decode_sample(m, s, p.entities, 0), UsageError);
  }
}

TEST_CASE("train job JSON") {
  TrainJob job = kgdial::testing::tiny_job("x", Variant::kLstmL22, "D-4", 11);
  job.pretrained_embeddings = "vec.txt";
  const TrainJob back = TrainJob::from_json(job.to_json());
  CHECK(back.to_json() == job.to_json());
  CHECK(back.variant == Variant::kLstmL22);
  CHECK(back.train.seed == 11);

  // absent fields come from the defaults, nested objects merge key by key
  const TrainJob merged = TrainJob::from_json(nlohmann::json::parse(R"({"id": "y", "train": {"seed": 5}, "beam": {"beam_size": 7}})"), job);
  CHECK(merged.id == "y");
  CHECK(merged.variant == Variant::kLstmL22);
  CHECK(merged.hidden_size == 12);
  CHECK(merged.train.seed == 5);
  CHECK(merged.train.max_epochs == 2);
  CHECK(merged.beam.beam_size == 7);
  CHECK(merged.beam.max_length == 8);

  const TrainJob plain = TrainJob::from_json(nlohmann::json::parse(R"({"id": "z"})"));
  CHECK(plain.recipe == "D-1");
  CHECK(plain.beam.min_length == 1);

  CHECK_THROWS_AS(TrainJob::from_json(nlohmann::json::parse(R"({"variant": "LSTM-L11"})")), SchemaError);
  CHECK_THROWS_AS(TrainJob::from_json(nlohmann::json::parse(R"({"id": "a", "hidden_size": "big"})")), SchemaError);
  CHECK_THROWS_AS(TrainJob::from_json(nlohmann::json::array()), SchemaError);
  CHECK_THROWS(TrainJob::from_json(nlohmann::json::parse(R"({"id": "a", "variant": "GRU"})")));
}

TEST_CASE("pipeline manifest") {
  const auto base = nlohmann::json::parse(R"({
    "format": "kgdial-manifest", "version": 1, "seed": 42,
    "train": "data/train.jsonl", "dev": "/abs/dev.jsonl",
    "defaults": {"hidden_size": 32, "train": {"max_epochs": 3}},
    "jobs": [
      {"id": "a", "recipe": "D-1"},
      {"id": "b", "recipe": "D-6", "variant": "LSTM-L31", "train": {"seed": 9}},
      {"id": "c", "recipe": "D-2", "hidden_size": 16}
    ]})");

  SUBCASE("paths, defaults and seeds") {
    const auto m = PipelineManifest::from_json(base, "/work");
    CHECK(m.train_corpus == fs::path("/work/data/train.jsonl"));
    CHECK(m.dev_corpus == fs::path("/abs/dev.jsonl"));
    CHECK(m.test_corpus.empty());
    CHECK(m.entities.empty());
    CHECK(m.checkpoint_dir == fs::path("/work/checkpoints"));
    CHECK(m.ranker == fs::path("/work/ranker.json"));
    REQUIRE(m.jobs.size() == 3);
    CHECK(m.jobs[0].hidden_size == 32);
    CHECK(m.jobs[2].hidden_size == 16);
    CHECK(m.jobs[1].train.max_epochs == 3);
    CHECK(m.jobs[1].variant == Variant::kLstmL31);
    CHECK(m.jobs[0].train.seed == job_seed(42, 0));
    CHECK(m.jobs[1].train.seed == 9);
    CHECK(m.jobs[2].train.seed == job_seed(42, 2));
    CHECK(job_seed(42, 0) != job_seed(42, 1));
    CHECK(job_seed(42, 0) != job_seed(43, 0));
    CHECK(m.checkpoint_path(m.jobs[1]) == fs::path("/work/checkpoints/b.ckpt"));
    CHECK(m.candidates_path(m.jobs[2]) == fs::path("/work/candidates/c.jsonl"));

    // written paths are already resolved, so reading back is stable
    const auto again = PipelineManifest::from_json(m.to_json(), "/elsewhere");
    CHECK(again.to_json() == m.to_json());
  }
  SUBCASE("recipe files resolve against the manifest directory") {
    auto j = base;
    j["jobs"][0]["recipe"] = "recipes/d3.recipe";
    const auto m = PipelineManifest::from_json(j, KGDIAL_SOURCE_DIR);
    CHECK(m.jobs[0].recipe == (fs::path(KGDIAL_SOURCE_DIR) / "recipes/d3.recipe").string());
    j["jobs"][0]["recipe"] = "recipes/missing.recipe";
    CHECK_THROWS_AS(PipelineManifest::from_json(j, KGDIAL_SOURCE_DIR), ValidationError);
  }
  SUBCASE("validation") {
    auto dup = base;
    dup["jobs"][2]["id"] = "a";
    CHECK_THROWS_AS(PipelineManifest::from_json(dup), ValidationError);
    auto unknown = base;
    unknown["jobs"][1]["recipe"] = "D-9";
    CHECK_THROWS_AS(PipelineManifest::from_json(unknown), ValidationError);
    auto empty = base;
    empty["jobs"] = nlohmann::json::array();
    CHECK_THROWS_AS(PipelineManifest::from_json(empty), ValidationError);
    auto no_train = base;
    no_train.erase("train");
    CHECK_THROWS_AS(PipelineManifest::from_json(no_train), SchemaError);
    auto wrong = base;
    wrong["format"] = "other";
    CHECK_THROWS_AS(PipelineManifest::from_json(wrong), FormatError);
    wrong = base;
    wrong["version"] = 2;
    CHECK_THROWS_AS(PipelineManifest::from_json(wrong), FormatError);
  }
  SUBCASE("loading from disk") {
    const auto path = scratch("manifest.json");
    write_file(path, base.dump(2));
    const auto m = PipelineManifest::load(path);
    CHECK(m.train_corpus == path.parent_path() / "data/train.jsonl");
    write_file(path, "{\"format\": ");
    CHECK_THROWS_AS(PipelineManifest::load(path), ParseError);
    fs::remove(path);
    CHECK_THROWS_AS(PipelineManifest::load(path), IoError);
  }
}

TEST_CASE("response selection") {
  const auto& p = tiny_pipeline();
  const std::vector<DialogueSample> samples(p.dev.begin(), p.dev.begin() + 3);
  const std::string s0 = samples[0].id, s1 = samples[1].id, s2 = samples[2].id;

  SUBCASE("beam score decides without a ranker") {
    const std::vector<CandidateResponse> pool = {
        cand(s1, "A", "b one", -2.0), cand(s0, "A", "a one", -1.5), cand(s0, "B", "a two", -0.5),
        cand(s2, "B", "c one", -3.0), cand(s1, "B", "b two", -2.0), cand(s0, "A", "a three", -0.9),
    };
    const auto rows = select_responses(pool, samples, nullptr);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].sample_id == s0);
    CHECK(rows[0].tokens == split_whitespace("a two"));
    CHECK(rows[0].score == -0.5);
    CHECK(rows[1].model_id == "A");  // tie on score and beam score: lower model id
    CHECK(rows[2].tokens == split_whitespace("c one"));

    const auto j = rows[0].to_json();
    CHECK(j.at("id") == s0);
    CHECK(j.at("response") == "a two");
    CHECK(j.at("model_id") == "B");
    CHECK(j.at("score") == -0.5);

    const auto path = scratch("final.jsonl");
    write_selections(path, rows);
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) CHECK(nlohmann::json::parse(line).at("id") == rows[n++].sample_id);
    CHECK(n == 3);
    fs::remove(path);
  }
  SUBCASE("ranker picks the highest ranker score") {
    std::vector<CandidateResponse> pool;
    for (const auto& s : samples)
      for (const auto& m : p.models)
        for (auto& c : decode_sample(m, s, p.entities, 3)) pool.push_back(std::move(c));
    const auto rows = select_responses(pool, samples, &p.ranker);
    REQUIRE(rows.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      Real best = -1e300;
      for (const auto& c : pool)
        if (c.sample_id == samples[i].id) best = std::max(best, p.ranker.score(c, samples[i]));
      CHECK(rows[i].score == best);
    }
  }
  SUBCASE("misalignment") {
    const std::vector<CandidateResponse> missing = {cand(s0, "A", "x", 0), cand(s1, "A", "y", 0)};
    try {
      select_responses(missing, samples, nullptr);
      FAIL("no throw");
    } catch (const AlignmentError& e) {
      CHECK(std::string(e.what()).find(s2) != std::string::npos);
    }
    std::vector<CandidateResponse> extra = {cand(s0, "A", "x", 0), cand(s1, "A", "y", 0), cand(s2, "A", "z", 0),
                                            cand("stranger", "A", "w", 0)};
    CHECK_THROWS_AS(select_responses(extra, samples, nullptr), AlignmentError);
  }
}
