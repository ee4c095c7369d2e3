// cenet_toydata: writes a coloured-shape daytime corpus and its manifests
// (train, query and gallery) for trying the cenet commands end to end.

#include "cenet/datasets.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <set>

using namespace cenet;

int main(int argc, char** argv) {
  CLI::App app{"Write a toy daytime person corpus"};
  std::string out;
  int identities = 8, per_identity = 12, cameras = 3;
  Index height = 128, width = 64;
  std::uint64_t seed = 7;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--identities", identities, "Number of identities")->capture_default_str();
  app.add_option("--per-identity", per_identity, "Images per identity")->capture_default_str();
  app.add_option("--cameras", cameras, "Number of cameras")->capture_default_str();
  app.add_option("--height", height, "Image height")->capture_default_str();
  app.add_option("--width", width, "Image width")->capture_default_str();
  app.add_option("--seed", seed, "Generator seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path dir(out);
    DatasetSplit day = make_shape_corpus(dir / "images", identities, per_identity, cameras, height, width, seed);
    write_manifest(day, dir / "train.manifest");
    // first image of every (identity, camera) is a query, the rest gallery
    DatasetSplit query, gallery;
    std::set<std::pair<int, int>> seen;
    for (PersonSample s : day.samples) {
      const bool q = seen.insert({s.pid, s.camid}).second;
      s.role = q ? Role::query : Role::gallery;
      (q ? query : gallery).samples.push_back(s);
    }
    query.role = Role::query;
    gallery.role = Role::gallery;
    write_manifest(query, dir / "query.manifest");
    write_manifest(gallery, dir / "gallery.manifest");
    std::cout << "wrote " << day.size() << " images, " << query.size() << " queries, " << gallery.size()
              << " gallery items under " << dir.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
