#include "doctest.h"
#include "cli_runner.hpp"
#include "fixtures.hpp"

#include "cenet/archive.hpp"
#include "cenet/image_io.hpp"
#include "cenet/metrics.hpp"

using namespace cenet;
using namespace cenet::testing;

namespace {

struct CliFixture {
  TinyCorpus data = make_tiny_corpus("cli_fixture");
  std::filesystem::path dir = data.root;
  std::filesystem::path day_manifest = dir / "day.manifest";
  std::filesystem::path query = dir / "query.manifest";
  std::filesystem::path gallery = dir / "gallery.manifest";
  std::filesystem::path ckpt = dir / "model.ckpt";

  CliFixture() {
    write_manifest(data.real, day_manifest);
    auto [q, g] = held_in_split(data.real);
    write_manifest(q, query);
    write_manifest(g, gallery);
    ModelConfig cfg = tiny_config();
    CENet<float> model(cfg, 4);
    write_archive(ckpt, model_archive(model));
  }
};

}  // namespace

TEST_SUITE("examples") {

TEST_CASE("synth with a fixed seed is re-runnable byte-identically") {
  CliFixture fx;
  const auto a = fx.dir / "dark_a", b = fx.dir / "dark_b";
  CliResult ra = run_cli({"synth", "--src", fx.day_manifest.string(), "--out", a.string(), "--seed", "7"});
  CliResult rb = run_cli({"synth", "--src", fx.day_manifest.string(), "--out", b.string(), "--seed", "7"});
  REQUIRE_MESSAGE(ra.status == 0, ra.output);
  REQUIRE_MESSAGE(rb.status == 0, rb.output);
  CHECK(std::filesystem::exists(a / "manifest.txt"));
  CHECK(std::filesystem::exists(a / "degradation.jsonl"));
  const auto ta = tree_contents(a), tb = tree_contents(b);
  CHECK(ta.size() == fx.data.real.size() + 2);
  CHECK(ta == tb);
  DatasetSplit dark = load_manifest(a / "manifest.txt");
  CHECK(dark.size() == fx.data.real.size());
  for (const auto& s : dark.samples) CHECK(s.domain == Domain::synthetic);
}

TEST_CASE("eval prints the summary and writes the csv report") {
  CliFixture fx;
  const auto stem = fx.dir / "reports" / "eval";
  CliResult r = run_cli({"eval", "--ckpt", fx.ckpt.string(), "--query", fx.query.string(), "--gallery",
                         fx.gallery.string(), "--out", stem.string()});
  REQUIRE_MESSAGE(r.status == 0, r.output);
  CHECK(r.output.find("mAP ") != std::string::npos);
  CHECK(r.output.find("| Rank-1 ") != std::string::npos);
  CHECK(r.output.find("| Rank-5 ") != std::string::npos);
  CHECK(r.output.find("| Rank-10 ") != std::string::npos);
  CHECK(std::filesystem::exists(stem.string() + ".csv"));
  CHECK(read_bytes(stem.string() + ".csv").rfind("k,cmc\n", 0) == 0);
}

TEST_CASE("enhance writes an 8-bit reflectance image without ReID weights") {
  CliFixture fx;
  Archive a = read_archive(fx.ckpt);
  a.strip_group(ParamGroup::reid);
  write_archive(fx.dir / "relight_only.ckpt", a);
  const auto input = fx.data.synthetic.samples[0].image_path;
  const auto out = fx.dir / "enhanced.png";
  CliResult r = run_cli({"enhance", "--ckpt", (fx.dir / "relight_only.ckpt").string(), "--in", input.string(), "--out",
                         out.string()});
  REQUIRE_MESSAGE(r.status == 0, r.output);
  Image R = load_image(out);
  Image src = load_image(input);
  CHECK(R.shape == src.shape);
  CHECK(R.data.minCoeff() >= 0.0f);
  CHECK(R.data.maxCoeff() <= 1.0f);
}

}  // TEST_SUITE

TEST_CASE("help lists every config key with its schema default") {
  const Json defaults = to_json(AppConfig::full());
  for (const char* command : {"synth", "train", "eval", "enhance", "report"}) {
    CliResult r = run_cli({command, "--help"});
    REQUIRE(r.status == 0);
    for (const auto& key : leaf_keys(defaults)) {
      const std::string shown = "config key " + key;
      CHECK_MESSAGE(r.output.find(shown) != std::string::npos, command << " --help lacks " << key);
      const std::string def = leaf_to_flag(get_dotted(defaults, key));
      if (!def.empty()) {
        const auto at = r.output.find(shown);
        const auto line_start = r.output.rfind("  --", at);
        const std::string block = r.output.substr(line_start, at - line_start);
        CHECK_MESSAGE(block.find("[" + def + "]") != std::string::npos, key << " default " << def);
      }
    }
  }
}

TEST_CASE("flag overrides reach the configuration") {
  CliFixture fx;
  // an out-of-range override must be rejected by validation of the resolved config
  CliResult r = run_cli({"synth", "--src", fx.day_manifest.string(), "--out", (fx.dir / "x").string(), "--seed", "1",
                         "--degradation.brightness", "50,10"});
  CHECK(r.status == 3);
  CHECK(r.output.find("error: validation:") != std::string::npos);
}

TEST_CASE("failures exit with a one-line diagnostic per class") {
  CliFixture fx;
  const auto dir = fx.dir;
  std::ofstream(dir / "bad.json") << "{\"train\": {\"nonsense\": 1}}";
  std::ofstream(dir / "bad.manifest") << "path:a.png|pid:x|camid:0|domain:real|role:query\n";
  std::ofstream(dir / "garbage.ckpt") << "definitely not an archive";

  CliResult missing_seed = run_cli({"synth", "--src", fx.day_manifest.string(), "--out", (dir / "o").string()});
  CHECK(missing_seed.status == 2);
  CHECK(missing_seed.output.find("--seed is required") != std::string::npos);

  CliResult bad_config = run_cli({"eval", "--config", (dir / "bad.json").string()});
  CHECK(bad_config.status == 2);
  CHECK(bad_config.output.find("error: config:") != std::string::npos);

  CliResult bad_value = run_cli({"eval", "--train.P", "many"});
  CHECK(bad_value.status == 2);

  CliResult bad_manifest = run_cli({"synth", "--src", (dir / "bad.manifest").string(), "--out", (dir / "o").string(),
                                    "--seed", "1"});
  CHECK(bad_manifest.status == 3);
  CHECK(bad_manifest.output.find("line 1") != std::string::npos);

  CliResult no_file = run_cli({"eval", "--ckpt", (dir / "absent.ckpt").string(), "--query", fx.query.string(),
                               "--gallery", fx.gallery.string()});
  CHECK(no_file.status == 4);
  CHECK(no_file.output.find("error: io:") != std::string::npos);

  CliResult corrupt = run_cli({"eval", "--ckpt", (dir / "garbage.ckpt").string(), "--query", fx.query.string(),
                               "--gallery", fx.gallery.string()});
  CHECK(corrupt.status == 5);

  CliResult no_command = run_cli({});
  CHECK(no_command.status != 0);

  for (const CliResult* r : {&missing_seed, &bad_config, &bad_manifest, &no_file, &corrupt}) {
    const auto first = r->output.find("error: ");
    REQUIRE(first != std::string::npos);
    CHECK(r->output.find("error: ", first + 1) == std::string::npos);
  }
}

TEST_CASE("eval refuses a checkpoint without the ReID subnet") {
  CliFixture fx;
  Archive a = read_archive(fx.ckpt);
  a.strip_group(ParamGroup::reid);
  write_archive(fx.dir / "no_reid.ckpt", a);
  CliResult r = run_cli({"eval", "--ckpt", (fx.dir / "no_reid.ckpt").string(), "--query", fx.query.string(),
                         "--gallery", fx.gallery.string()});
  CHECK(r.status == 3);
}

TEST_CASE("enhance processes a directory into matching file names") {
  CliFixture fx;
  const auto out = fx.dir / "enhanced_dir";
  CliResult r = run_cli({"enhance", "--ckpt", fx.ckpt.string(), "--in", (fx.data.root / "dark" / "images").string(), "--out",
                         out.string()});
  REQUIRE_MESSAGE(r.status == 0, r.output);
  std::size_t images = 0;
  for (const auto& e : std::filesystem::directory_iterator(fx.data.root / "dark" / "images"))
    if (e.path().extension() == ".png") {
      ++images;
      CHECK(std::filesystem::exists(out / (e.path().stem().string() + ".png")));
    }
  CHECK(images > 0);
}

TEST_CASE("train runs end to end and report converts its metrics") {
  CliFixture fx;
  const auto dark = fx.dir / "dark_train";
  REQUIRE(run_cli({"synth", "--src", fx.day_manifest.string(), "--out", dark.string(), "--seed", "3"}).status == 0);
  const auto out = fx.dir / "run";
  CliResult t = run_cli({"train", "--preset", "toy", "--seed", "5", "--real", fx.day_manifest.string(), "--syn",
                         (dark / "manifest.txt").string(), "--query", fx.query.string(), "--gallery",
                         fx.gallery.string(), "--out", out.string(), "--model.image_height", "16",
                         "--model.image_width", "8", "--model.patch_size", "4", "--model.embed_dim", "8",
                         "--model.heads", "2", "--model.shared_depth", "1", "--model.reid_depth", "1",
                         "--model.decoder_depth", "1", "--model.relight_channels", "4", "--train.P", "2",
                         "--train.K", "2", "--train.steps_per_epoch", "4", "--train.warmup_steps", "1",
                         "--train.eval_every", "0"});
  REQUIRE_MESSAGE(t.status == 0, t.output);
  CHECK(std::filesystem::exists(out / "checkpoint.ckpt"));
  CHECK(std::filesystem::exists(out / "config.json"));
  auto rows = read_metrics_log(out / "metrics.jsonl");
  CHECK(rows.size() == 4);
  CHECK(t.output.find("eval step 4: mAP") != std::string::npos);

  CliResult rep = run_cli({"report", "--in", (out / "metrics.jsonl").string(), "--out", (out / "curves").string()});
  REQUIRE_MESSAGE(rep.status == 0, rep.output);
  CHECK(std::filesystem::exists(out / "curves.csv"));
  CHECK(std::filesystem::exists(out / "curves.svg"));

  CliResult missing_seed = run_cli({"train", "--preset", "toy", "--real", fx.day_manifest.string(), "--out",
                                    (fx.dir / "r2").string()});
  CHECK(missing_seed.status == 2);
}
