#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "modaladapt/corpus.hpp"
#include "modaladapt/experiment.hpp"
#include "modaladapt/io.hpp"
#include "modaladapt/metrics.hpp"
#include "modaladapt/synth.hpp"

using namespace modaladapt;
using modaladapt::testing::tiny_task;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("modaladapt_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// Independently scripted MCD: a literal transcription of the formula.
double mcd_reference(const Matrix& ref, const Matrix& pred, const std::vector<std::size_t>& dims) {
  double total = 0.0;
  for (std::size_t t = 0; t < ref.rows(); ++t) {
    double sq = 0.0;
    for (std::size_t d : dims) sq += std::pow(ref(t, d) - pred(t, d), 2.0);
    total += (10.0 / std::log(10.0)) * std::sqrt(2.0 * sq);
  }
  return total / double(ref.rows());
}

// Independently scripted F0 RMSE in Hz over mutually voiced frames.
double f0_reference(const Matrix& ref, const Matrix& pred, std::size_t f0_col,
                    std::size_t v_col) {
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < ref.rows(); ++t) {
    if (ref(t, v_col) > 0.5 && pred(t, v_col) > 0.5) {
      const double e = std::exp(ref(t, f0_col)) - std::exp(pred(t, f0_col));
      sq += e * e;
      ++n;
    }
  }
  return std::sqrt(sq / double(n));
}

}  // namespace

TEST_CASE("corpus generation is deterministic") {
  const SyntheticTaskSpec task = tiny_task(70);
  Dataset a = generate_dataset(task);
  Dataset b = generate_dataset(task);
  REQUIRE(a.utterances().size() == b.utterances().size());
  for (std::size_t i = 0; i < a.utterances().size(); ++i) {
    REQUIRE(a.utterances()[i].id == b.utterances()[i].id);
    REQUIRE(a.utterances()[i].linguistic == b.utterances()[i].linguistic);
    REQUIRE(a.utterances()[i].acoustic == b.utterances()[i].acoustic);
    REQUIRE(a.utterances()[i].wave == b.utterances()[i].wave);
  }
}

TEST_CASE("on-disk corpus generation writes byte-identical files on rerun") {
  SyntheticTaskSpec task = tiny_task(71);
  task.utterances_per_speaker = 4;
  task.adapt_pool_utterances = 3;
  task.valid_per_speaker = 1;
  task.test_per_speaker = 1;
  const fs::path dir_a = temp_dir("gen_a");
  const fs::path dir_b = temp_dir("gen_b");
  generate_corpus(task, dir_a);
  generate_corpus(task, dir_b);
  // overwrite in place must also be stable
  generate_corpus(task, dir_a);

  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(entry.path(), dir_a);
    REQUIRE(file_bytes(entry.path()) == file_bytes(dir_b / rel));
  }
  REQUIRE(files > 10);
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("generate and load round trip preserves every tensor") {
  SyntheticTaskSpec task = tiny_task(72);
  task.utterances_per_speaker = 4;
  task.adapt_pool_utterances = 3;
  task.valid_per_speaker = 1;
  task.test_per_speaker = 1;
  const fs::path dir = temp_dir("roundtrip");
  generate_corpus(task, dir);
  const Dataset loaded = load_corpus(dir / "manifest.txt");
  const Dataset expect = generate_dataset(task);
  REQUIRE(loaded.utterances().size() == expect.utterances().size());
  for (std::size_t i = 0; i < loaded.utterances().size(); ++i) {
    const auto& lu = loaded.utterances()[i];
    const auto& eu = expect.utterances()[i];
    REQUIRE(lu.id == eu.id);
    REQUIRE(lu.speaker == eu.speaker);
    REQUIRE(lu.split == eu.split);
    REQUIRE(lu.linguistic == eu.linguistic);
    REQUIRE(lu.acoustic == eu.acoustic);
    REQUIRE(lu.wave == eu.wave);
  }
  REQUIRE(loaded.speakers().size() == expect.speakers().size());
  fs::remove_all(dir);
}

TEST_CASE("noiseless waveform blocks equal the decode projection") {
  SyntheticTaskSpec task = tiny_task(73);
  task.noise_std = 0.0;
  const SyntheticWorld world = make_world(task);
  const Utterance u = synth_utterance(task, world, "spk00", "spk00-u000", Split::kTrain);
  for (std::size_t t = 0; t < u.acoustic.rows(); ++t) {
    for (std::size_t r = 0; r < task.samples_per_frame; ++r) {
      double expect = 0.0;
      for (std::size_t c = 0; c < task.acoustic_dim; ++c) {
        expect += world.decode(r, c) * u.acoustic(t, c);
      }
      expect = std::clamp(expect, -1.0, 1.0);
      REQUIRE(u.wave[t * task.samples_per_frame + r] == expect);
    }
  }
}

TEST_CASE("noiseless features are recoverable from waveform blocks") {
  SyntheticTaskSpec task = tiny_task(74);
  task.noise_std = 0.0;
  const SyntheticWorld world = make_world(task);
  const Utterance u = synth_utterance(task, world, "spk01", "spk01-u002", Split::kTrain);
  // Normal-equations recovery of frame 0's acoustic vector.
  const std::size_t dim = task.acoustic_dim, samples = task.samples_per_frame;
  Matrix gram(dim, dim);
  std::vector<double> rhs(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < samples; ++r) acc += world.decode(r, i) * world.decode(r, j);
      gram(i, j) = acc;
    }
    double acc = 0.0;
    for (std::size_t r = 0; r < samples; ++r) acc += world.decode(r, i) * u.wave[r];
    rhs[i] = acc;
  }
  const auto recovered = detail::solve_linear(gram, rhs);
  for (std::size_t i = 0; i < dim; ++i) {
    REQUIRE_THAT(recovered[i], Catch::Matchers::WithinAbs(u.acoustic(0, i), 1e-8));
  }
}

TEST_CASE("distinct speakers produce distinct acoustics for the same input") {
  SyntheticTaskSpec task = tiny_task(75);
  task.noise_std = 0.0;
  const SyntheticWorld world = make_world(task);
  // Same utterance stream (same id) rendered by two speakers.
  const Utterance a = synth_utterance(task, world, "spk00", "shared-id", Split::kTrain);
  const Utterance b = synth_utterance(task, world, "spk01", "shared-id", Split::kTrain);
  REQUIRE(a.linguistic == b.linguistic);
  REQUIRE_FALSE(a.acoustic == b.acoustic);
}

TEST_CASE("generated values are finite and voicing flags are binary") {
  const Dataset data = generate_dataset(tiny_task(76));
  const std::size_t v_col = tiny_task(76).voicing_col();
  for (const auto& u : data.utterances()) {
    REQUIRE(u.linguistic.all_finite());
    REQUIRE(u.acoustic.all_finite());
    for (double w : u.wave) {
      REQUIRE(std::isfinite(w));
      REQUIRE(w >= -1.0);
      REQUIRE(w <= 1.0);
    }
    bool saw_voiced = false;
    for (std::size_t t = 0; t < u.acoustic.rows(); ++t) {
      const double v = u.acoustic(t, v_col);
      REQUIRE((v == 0.0 || v == 1.0));
      saw_voiced |= v == 1.0;
    }
    REQUIRE(saw_voiced);
  }
}

TEST_CASE("corpus loader rejects corrupted inputs") {
  SyntheticTaskSpec task = tiny_task(77);
  task.utterances_per_speaker = 4;
  task.adapt_pool_utterances = 3;
  task.valid_per_speaker = 1;
  task.test_per_speaker = 1;
  const fs::path dir = temp_dir("corrupt");
  const CorpusManifest manifest = generate_corpus(task, dir);

  SECTION("truncated feature file") {
    const fs::path victim = dir / manifest.utterances.front().acoustic_path;
    fs::resize_file(victim, fs::file_size(victim) - 9);
    REQUIRE_THROWS_WITH(load_corpus(dir / "manifest.txt"),
                        Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("bad magic") {
    const fs::path victim = dir / manifest.utterances.front().linguistic_path;
    std::ofstream out(victim, std::ios::binary);
    out << "JUNKJUNKJUNK";
    out.close();
    REQUIRE_THROWS_WITH(load_corpus(dir / "manifest.txt"),
                        Catch::Matchers::ContainsSubstring("bad magic"));
  }
  SECTION("waveform misaligned with the frame count") {
    const auto& rec = manifest.utterances.front();
    const auto wave = read_wave_file(dir / rec.waveform_path);
    std::vector<double> shorter(wave.begin(), wave.end() - 5);
    write_wave_file(dir / rec.waveform_path, shorter);
    REQUIRE_THROWS_WITH(load_corpus(dir / "manifest.txt"),
                        Catch::Matchers::ContainsSubstring(rec.id) &&
                            Catch::Matchers::ContainsSubstring("samples_per_frame"));
  }
  SECTION("missing file") {
    fs::remove(dir / manifest.utterances.front().waveform_path);
    REQUIRE_THROWS_WITH(load_corpus(dir / "manifest.txt"),
                        Catch::Matchers::ContainsSubstring("cannot open"));
  }
  fs::remove_all(dir);
}

TEST_CASE("adaptation subsets are nested, seeded and bounded") {
  const Dataset data = generate_dataset(tiny_task(78));
  const auto pool = data.select(Split::kTrain, "adp00");
  REQUIRE(pool.size() >= 8);

  const auto subsets = split_adaptation_subsets(pool, {2, 5, 8}, 99);
  REQUIRE(subsets.size() == 3);
  REQUIRE(subsets[0].size() == 2);
  REQUIRE(subsets[1].size() == 5);
  REQUIRE(subsets[2].size() == 8);
  for (std::size_t i = 0; i + 1 < subsets.size(); ++i) {
    for (const Utterance* u : subsets[i]) {
      REQUIRE(std::find(subsets[i + 1].begin(), subsets[i + 1].end(), u) != subsets[i + 1].end());
    }
  }
  const auto again = split_adaptation_subsets(pool, {2, 5, 8}, 99);
  REQUIRE(subsets == again);

  const auto full = split_adaptation_subsets(pool, {pool.size()}, 99);
  REQUIRE(full.front().size() == pool.size());

  REQUIRE_THROWS_WITH(split_adaptation_subsets(pool, {pool.size() + 1}, 99),
                      Catch::Matchers::ContainsSubstring("exceeds"));
  REQUIRE_THROWS_WITH(split_adaptation_subsets(pool, {5, 2}, 99),
                      Catch::Matchers::ContainsSubstring("ascending"));
}

TEST_CASE("mcd_db basics") {
  auto rng = make_rng(80, "mcd");
  const Matrix ref = random_matrix(7, 5, rng);
  SECTION("identical inputs give exactly zero") {
    REQUIRE(mcd_db(ref, ref, {1, 2, 3}) == 0.0);
  }
  SECTION("single frame, single dim, unit difference") {
    Matrix a(1, 2), b(1, 2);
    a(0, 1) = 1.0;
    const double expect = (10.0 / std::log(10.0)) * std::sqrt(2.0);
    REQUIRE_THAT(mcd_db(a, b, {1}), Catch::Matchers::WithinRel(expect, 1e-14));
  }
  SECTION("empty dim set and shape mismatch are rejected") {
    REQUIRE_THROWS_AS(mcd_db(ref, ref, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(mcd_db(ref, Matrix(7, 4), {1}), std::invalid_argument);
  }
}

TEST_CASE("mcd_db matches the scripted reference on 100 random instances") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto rng = make_rng(seed, "mcd_oracle");
    std::uniform_int_distribution<std::size_t> fdist(1, 9), ddist(3, 8);
    const std::size_t frames = fdist(rng), dim = ddist(rng);
    const Matrix ref = random_matrix(frames, dim, rng);
    const Matrix pred = random_matrix(frames, dim, rng);
    std::vector<std::size_t> dims;
    for (std::size_t d = 1; d < dim; ++d) dims.push_back(d);
    REQUIRE_THAT(mcd_db(ref, pred, dims),
                 Catch::Matchers::WithinAbs(mcd_reference(ref, pred, dims), 1e-10));
  }
}

TEST_CASE("mcd_db is symmetric and scales linearly with the error") {
  auto rng = make_rng(81, "mcd_prop");
  const Matrix a = random_matrix(6, 4, rng);
  const Matrix b = random_matrix(6, 4, rng);
  const std::vector<std::size_t> dims = {1, 2, 3};
  REQUIRE(mcd_db(a, b, dims) == mcd_db(b, a, dims));

  for (double k : {0.0, 0.5, 2.0, 7.5}) {
    Matrix scaled = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
      scaled.data()[i] = a.data()[i] + k * (b.data()[i] - a.data()[i]);
    }
    REQUIRE_THAT(mcd_db(a, scaled, dims),
                 Catch::Matchers::WithinAbs(k * mcd_db(a, b, dims), 1e-9));
  }
}

TEST_CASE("f0_rmse basics and the hand-computed case") {
  AcousticLayout layout = default_layout(4);  // cep dim 1, f0 col 2, voicing col 3
  SECTION("identical sequences give exactly zero") {
    Matrix a(3, 4);
    for (std::size_t t = 0; t < 3; ++t) {
      a(t, 2) = 5.0;
      a(t, 3) = 1.0;
    }
    REQUIRE(f0_rmse(a, a, layout) == 0.0);
  }
  SECTION("all-unvoiced support is an explicit error") {
    Matrix a(3, 4), b(3, 4);  // voicing flags all zero
    REQUIRE_THROWS_WITH(f0_rmse(a, b, layout),
                        Catch::Matchers::ContainsSubstring("no mutually voiced"));
  }
  SECTION("three-frame hand computation") {
    Matrix ref(3, 4), pred(3, 4);
    // frame 0: both voiced, 120 Hz vs 130 Hz
    ref(0, 2) = std::log(120.0);
    pred(0, 2) = std::log(130.0);
    ref(0, 3) = 1.0;
    pred(0, 3) = 1.0;
    // frame 1: ref unvoiced -> excluded despite a huge F0 gap
    ref(1, 2) = std::log(500.0);
    pred(1, 2) = std::log(100.0);
    ref(1, 3) = 0.0;
    pred(1, 3) = 1.0;
    // frame 2: both voiced, 200 Hz vs 190 Hz
    ref(2, 2) = std::log(200.0);
    pred(2, 2) = std::log(190.0);
    ref(2, 3) = 1.0;
    pred(2, 3) = 0.9;  // above threshold
    const double expect = std::sqrt((10.0 * 10.0 + 10.0 * 10.0) / 2.0);
    REQUIRE_THAT(f0_rmse(ref, pred, layout), Catch::Matchers::WithinRel(expect, 1e-12));
  }
}

TEST_CASE("f0_rmse matches the scripted reference on 100 random instances") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto rng = make_rng(seed, "f0_oracle");
    std::uniform_int_distribution<std::size_t> fdist(2, 12);
    std::uniform_real_distribution<double> f0dist(std::log(80.0), std::log(400.0));
    std::bernoulli_distribution voiced(0.7);
    const std::size_t frames = fdist(rng);
    Matrix ref(frames, 4), pred(frames, 4);
    bool any_mutual = false;
    for (std::size_t t = 0; t < frames; ++t) {
      ref(t, 2) = f0dist(rng);
      pred(t, 2) = f0dist(rng);
      ref(t, 3) = voiced(rng) ? 1.0 : 0.0;
      pred(t, 3) = voiced(rng) ? 1.0 : 0.0;
      any_mutual |= ref(t, 3) == 1.0 && pred(t, 3) == 1.0;
    }
    if (!any_mutual) {
      ref(0, 3) = pred(0, 3) = 1.0;
    }
    const AcousticLayout layout = default_layout(4);
    REQUIRE_THAT(f0_rmse(ref, pred, layout),
                 Catch::Matchers::WithinAbs(f0_reference(ref, pred, 2, 3), 1e-10));
  }
}

TEST_CASE("f0_rmse ignores frames outside the mutual voicing mask") {
  auto rng = make_rng(82, "f0_mask");
  const AcousticLayout layout = default_layout(4);
  Matrix ref(6, 4), pred(6, 4);
  std::uniform_real_distribution<double> f0dist(std::log(100.0), std::log(300.0));
  for (std::size_t t = 0; t < 6; ++t) {
    ref(t, 2) = f0dist(rng);
    pred(t, 2) = f0dist(rng);
    ref(t, 3) = t % 2 == 0 ? 1.0 : 0.0;
    pred(t, 3) = 1.0;
  }
  const double before = f0_rmse(ref, pred, layout);
  // scribble on the F0 of every non-mutual frame
  for (std::size_t t = 0; t < 6; ++t) {
    if (ref(t, 3) == 0.0) pred(t, 2) = 99.0;
  }
  REQUIRE(f0_rmse(ref, pred, layout) == before);
}

TEST_CASE("evaluate_speaker aggregates per-utterance metrics") {
  const SyntheticTaskSpec task = tiny_task(83);
  const Dataset data = generate_dataset(task);
  const AcousticLayout layout = default_layout(task.acoustic_dim);
  const auto utts = data.select(Split::kTest, "spk00");
  REQUIRE_FALSE(utts.empty());

  SECTION("a perfect predictor scores zero MCD and zero F0 RMSE") {
    FramePredictor perfect = [](const Utterance& u) { return u.acoustic; };
    EvalRow row = evaluate_speaker(perfect, utts, layout, {});
    REQUIRE(row.mcd_db == 0.0);
    REQUIRE(row.f0_rmse == 0.0);
    std::size_t frames = 0;
    for (const auto* u : utts) frames += u->frames();
    REQUIRE(row.frames == frames);
  }
  SECTION("a constant predictor matches the direct per-utterance formula") {
    const auto mean = speaker_mean_vector(data, "spk00");
    EvalRow row = evaluate_speaker(constant_predictor(mean), utts, layout, {});
    double frame_sum = 0.0;
    std::size_t frames = 0;
    for (const auto* u : utts) {
      Matrix constant(u->frames(), mean.size());
      for (std::size_t t = 0; t < u->frames(); ++t) {
        for (std::size_t d = 0; d < mean.size(); ++d) constant(t, d) = mean[d];
      }
      frame_sum += mcd_reference(u->acoustic, constant, layout.cepstral_dims) *
                   double(u->frames());
      frames += u->frames();
    }
    REQUIRE_THAT(row.mcd_db, Catch::Matchers::WithinRel(frame_sum / double(frames), 1e-10));
  }
  SECTION("order invariance") {
    FramePredictor perfect = [](const Utterance& u) { return u.acoustic; };
    auto reversed = utts;
    std::reverse(reversed.begin(), reversed.end());
    EvalRow a = evaluate_speaker(constant_predictor(speaker_mean_vector(data, "spk00")), utts,
                                 layout, {});
    EvalRow b = evaluate_speaker(constant_predictor(speaker_mean_vector(data, "spk00")), reversed,
                                 layout, {});
    REQUIRE_THAT(a.mcd_db, Catch::Matchers::WithinRel(b.mcd_db, 1e-12));
    REQUIRE_THAT(a.f0_rmse, Catch::Matchers::WithinRel(b.f0_rmse, 1e-12));
  }
}

TEST_CASE("eval CSV columns match the documented schema") {
  std::vector<EvalRow> rows(1);
  rows[0] = {"jg_seed0", "JG", "spk00", "multispeaker", 0, 5.25, 14.5, 123};
  std::ostringstream out;
  write_eval_csv(rows, out);
  std::istringstream lines(out.str());
  std::string header, row;
  std::getline(lines, header);
  REQUIRE(header == "model,strategy,speaker,condition,adapt_utterances,mcd_db,f0_rmse,frames");
  std::getline(lines, row);
  REQUIRE(row.substr(0, 35) == "jg_seed0,JG,spk00,multispeaker,0,5.");
}

TEST_CASE("manifest writer and reader round trip") {
  const fs::path dir = temp_dir("manifest");
  CorpusManifest manifest;
  manifest.root = dir;
  manifest.task = {{"samples_per_frame", "16"}, {"note", "hello world"}};
  manifest.speakers = {{"spk00", SpeakerRole::kTrain}, {"adp00", SpeakerRole::kAdapt}};
  UtteranceRecord rec;
  rec.id = "spk00-u000";
  rec.speaker = "spk00";
  rec.split = Split::kValid;
  rec.linguistic_path = "feats/a.mmaf";
  rec.acoustic_path = "feats/b.mmaf";
  rec.waveform_path = "-";
  manifest.utterances = {rec};
  write_manifest(manifest, dir / "manifest.txt");

  const CorpusManifest loaded = read_manifest(dir / "manifest.txt");
  REQUIRE(loaded.task.at("note") == "hello world");
  REQUIRE(loaded.speakers.size() == 2);
  REQUIRE(loaded.speakers[1].role == SpeakerRole::kAdapt);
  REQUIRE(loaded.utterances.size() == 1);
  REQUIRE(loaded.utterances[0].split == Split::kValid);
  REQUIRE(loaded.utterances[0].waveform_path == "-");
  fs::remove_all(dir);
}
