#include "cenet/datasets.hpp"

#include "cenet/image_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace cenet {

const char* role_name(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::query: return "query";
    case Role::gallery: return "gallery";
  }
  return "?";
}

Role parse_role(const std::string& name) {
  if (name == "train") return Role::train;
  if (name == "query") return Role::query;
  if (name == "gallery") return Role::gallery;
  throw std::invalid_argument("unknown role '" + name + "'");
}

void DatasetSplit::reindex() {
  id_index.clear();
  for (std::size_t i = 0; i < samples.size(); ++i) id_index[{samples[i].domain, samples[i].pid}].push_back(i);
  std::map<Domain, int> next;
  std::map<IdentityKey, int> label;
  for (const auto& [key, _] : id_index) label[key] = next[key.domain]++;
  for (auto& s : samples) s.label = label.at({s.domain, s.pid});
}

std::size_t DatasetSplit::num_identities(Domain d) const {
  return static_cast<std::size_t>(
      std::count_if(id_index.begin(), id_index.end(), [d](const auto& kv) { return kv.first.domain == d; }));
}

int DatasetSplit::num_cameras(Domain d) const {
  int n = 0;
  for (const auto& s : samples)
    if (s.domain == d) n = std::max(n, s.camid + 1);
  return n;
}

DatasetSplit DatasetSplit::only(Domain d) const {
  DatasetSplit out;
  out.role = role;
  for (const auto& s : samples)
    if (s.domain == d) out.samples.push_back(s);
  out.reindex();
  return out;
}

namespace {

int parse_int(const std::string& v, const std::string& key, int line) {
  try {
    std::size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    if (n < 0) throw ParseError(key + " must be non-negative", line);
    return n;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("invalid integer for " + key + ": '" + v + "'", line);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

DatasetSplit load_manifest(const fs::path& path, std::optional<Role> role) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  DatasetSplit split;
  std::optional<Role> seen_role;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::map<std::string, std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '|')) {
      const auto colon = field.find(':');
      if (colon == std::string::npos) throw ParseError("field without ':' separator: '" + field + "'", number);
      const std::string key = trim(field.substr(0, colon));
      const std::string value = trim(field.substr(colon + 1));
      static const std::set<std::string> known{"path", "pid", "camid", "domain", "role", "pair_path"};
      if (!known.count(key)) throw ParseError("unknown field '" + key + "'", number);
      if (!fields.emplace(key, value).second) throw ParseError("duplicate field '" + key + "'", number);
    }
    for (const char* req : {"path", "pid", "camid", "domain", "role"})
      if (!fields.count(req)) throw ParseError(std::string("missing field '") + req + "'", number);

    PersonSample s;
    if (fields["path"].empty()) throw ParseError("empty path", number);
    s.image_path = (base / fields["path"]).lexically_normal();
    s.pid = parse_int(fields["pid"], "pid", number);
    s.camid = parse_int(fields["camid"], "camid", number);
    try {
      s.domain = parse_domain(fields["domain"]);
      s.role = parse_role(fields["role"]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), number);
    }
    if (fields.count("pair_path") && !fields["pair_path"].empty()) {
      if (s.domain != Domain::synthetic)
        throw ValidationError("line " + std::to_string(number) + ": pair_path is only allowed for synthetic samples");
      s.pair_path = (base / fields["pair_path"]).lexically_normal();
      if (!fs::exists(*s.pair_path))
        throw ValidationError("line " + std::to_string(number) + ": pair_path does not exist: " + s.pair_path->string());
    }
    if (role && s.role != *role) continue;
    if (!seen_role) seen_role = s.role;
    split.samples.push_back(std::move(s));
  }
  split.role = role ? *role : seen_role.value_or(Role::train);
  split.reindex();
  return split;
}

void write_manifest(const DatasetSplit& split, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  fs::create_directories(base);
  std::ostringstream out;
  for (const auto& s : split.samples) {
    out << "path:" << s.image_path.lexically_relative(base).generic_string() << "|pid:" << s.pid << "|camid:" << s.camid
        << "|domain:" << domain_name(s.domain) << "|role:" << role_name(s.role);
    if (s.pair_path) out << "|pair_path:" << s.pair_path->lexically_relative(base).generic_string();
    out << '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write manifest " + path.string());
  f << out.str();
  if (!f) throw IoError("failed writing manifest " + path.string());
}

void check_disjoint(const DatasetSplit& query, const DatasetSplit& gallery) {
  std::set<std::string> paths;
  for (const auto& s : query.samples) paths.insert(s.image_path.string());
  for (const auto& s : gallery.samples)
    if (paths.count(s.image_path.string()))
      throw ValidationError("query and gallery share image " + s.image_path.string());
}

void DegradationConfig::validate() const {
  auto check = [](const std::array<double, 2>& r, const char* name, bool allow_zero) {
    const bool lo_ok = allow_zero ? r[0] >= 0 : r[0] > 0;
    if (!lo_ok || r[0] > r[1])
      throw ValidationError(std::string("degradation range ") + name + " must satisfy " + (allow_zero ? "0 <=" : "0 <") +
                            " lo <= hi");
  };
  check(brightness, "brightness", false);
  check(contrast, "contrast", false);
  check(color, "color", false);
  check(hue, "hue", true);
}

Image degrade(const Image& day, const DegradationFactors& f) {
  Image x = adjust(day, AdjustMode::brightness, f.brightness);
  x = adjust(x, AdjustMode::contrast, f.contrast);
  x = adjust(x, AdjustMode::saturation, f.saturation);
  if (f.hue != 0) x = adjust(x, AdjustMode::hue, f.hue);
  return x;
}

SynthesisResult synthesize_dark(const DatasetSplit& source, const DegradationConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  SynthesisResult result;
  result.split.role = source.role;
  Rng rng(cfg.seed);
  auto draw = [&rng](const std::array<double, 2>& r) {
    return std::uniform_real_distribution<double>(r[0], r[1])(rng);
  };
  const fs::path image_dir = fs::absolute(out_dir) / "images";
  fs::create_directories(image_dir);
  for (std::size_t i = 0; i < source.samples.size(); ++i) {
    const auto& src = source.samples[i];
    // Factors are drawn before decoding so a failing image does not shift
    // the random stream of the others.
    DegradationFactors f;
    f.brightness = draw(cfg.brightness);
    f.contrast = draw(cfg.contrast);
    f.saturation = draw(cfg.color);
    const double magnitude = draw(cfg.hue);
    f.hue = std::bernoulli_distribution(0.5)(rng) ? magnitude : -magnitude;

    char name[32];
    std::snprintf(name, sizeof(name), "%06zu_", i);
    const fs::path out_path = image_dir / (std::string(name) + src.image_path.stem().string() + ".png");
    try {
      save_image(out_path, degrade(load_image(src.image_path), f));
    } catch (const std::exception& e) {
      result.errors.push_back(src.image_path.string() + ": " + e.what());
      continue;
    }
    PersonSample s = src;
    s.image_path = out_path;
    s.domain = Domain::synthetic;
    s.pair_path = src.image_path;
    result.split.samples.push_back(s);
    result.report.push_back({src.image_path.string(), out_path.string(), src.pid, src.camid, f});
  }
  result.split.reindex();
  return result;
}

void write_degradation_report(const std::vector<DegradationRecord>& report, const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write degradation report " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& r : report) {
    nlohmann::ordered_json j;
    j["source"] = fs::path(r.source).lexically_relative(base).generic_string();
    j["output"] = fs::path(r.output).lexically_relative(base).generic_string();
    j["pid"] = r.pid;
    j["camid"] = r.camid;
    j["brightness"] = r.factors.brightness;
    j["contrast"] = r.factors.contrast;
    j["color"] = r.factors.saturation;
    j["hue"] = r.factors.hue;
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("failed writing degradation report " + path.string());
}

std::vector<PersonSample> pk_batch(const DatasetSplit& split, std::size_t P, std::size_t K, Rng& rng,
                                   std::optional<Domain> domain) {
  require(P > 0 && K > 0, "pk_batch: P and K must be positive");
  std::vector<IdentityKey> ids;
  for (const auto& [key, _] : split.id_index)
    if (!domain || key.domain == *domain) ids.push_back(key);
  require(ids.size() >= P, "pk_batch: split has " + std::to_string(ids.size()) + " identities, " + std::to_string(P) +
                               " requested");
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<PersonSample> batch;
  batch.reserve(P * K);
  for (std::size_t p = 0; p < P; ++p) {
    std::vector<std::size_t> pool = split.id_index.at(ids[p]);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(K, pool.size())));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    while (chosen.size() < K) chosen.push_back(pool[pick(rng)]);
    for (std::size_t i : chosen) batch.push_back(split.samples[i]);
  }
  return batch;
}

Augmented augment_pair(const Image& image, const Image* pair, Rng& rng, AugmentMode mode, const AugmentConfig& cfg) {
  Augmented out;
  out.image = resize(image, cfg.height, cfg.width);
  if (pair) out.pair = resize(*pair, cfg.height, cfg.width);
  out.mask = EraseMask{cfg.height, cfg.width, std::nullopt};
  if (mode == AugmentMode::eval) return out;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (cfg.flip_probability > 0 && unit(rng) < cfg.flip_probability) {
    out.image = hflip(out.image);
    if (out.pair) out.pair = hflip(*out.pair);
  }
  if (cfg.pad > 0) {
    std::uniform_int_distribution<Index> offset(0, 2 * cfg.pad);
    const Index top = offset(rng), left = offset(rng);
    out.image = pad_crop(out.image, cfg.pad, top, left, cfg.height, cfg.width);
    if (out.pair) out.pair = pad_crop(*out.pair, cfg.pad, top, left, cfg.height, cfg.width);
  }
  auto [erased, mask] = random_erase(out.image, rng, cfg.erase);
  out.image = std::move(erased);
  out.mask = mask;
  return out;
}

std::pair<Image, EraseMask> augment(const Image& image, Rng& rng, AugmentMode mode, const AugmentConfig& cfg) {
  Augmented a = augment_pair(image, nullptr, rng, mode, cfg);
  return {std::move(a.image), a.mask};
}

const Image& ImageCache::get(const fs::path& path) {
  const std::string key = path.string();
  auto it = images_.find(key);
  if (it == images_.end()) it = images_.emplace(key, load_image(path)).first;
  return it->second;
}

namespace {

struct Palette {
  std::array<float, 3> top, bottom, head;
};

void paint(Image& img, Index y, Index x, const std::array<float, 3>& c) {
  const Index H = img.dim(1), W = img.dim(2);
  if (y < 0 || y >= H || x < 0 || x >= W) return;
  for (Index ch = 0; ch < 3; ++ch) img.data[(ch * H + y) * W + x] = c[static_cast<std::size_t>(ch)];
}

}  // namespace

DatasetSplit make_shape_corpus(const fs::path& dir, int identities, int per_identity, int cameras, Index height,
                               Index width, std::uint64_t seed) {
  require(identities > 0 && per_identity > 0 && cameras > 0, "make_shape_corpus: counts must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, 0.02f);

  // Saturated, well-separated hues for torso and legs; brightness tiers keep
  // identities apart after heavy darkening too.
  std::vector<Palette> palettes;
  for (int i = 0; i < identities; ++i) {
    auto hue_color = [](double h, double v) {
      Image px = make_image(3, 1, 1, static_cast<float>(v));
      // start from a saturated red and rotate
      px.data << static_cast<float>(v), static_cast<float>(v * 0.15), static_cast<float>(v * 0.15);
      Image c = adjust(px, AdjustMode::hue, h);
      return std::array<float, 3>{c.data[0], c.data[1], c.data[2]};
    };
    const double golden = 137.50776405;
    Palette p;
    p.top = hue_color(std::fmod(i * golden, 360.0), 0.95 - 0.1 * (i % 3));
    p.bottom = hue_color(std::fmod(i * golden + 180.0 + 40.0 * (i % 2), 360.0), 0.35 + 0.15 * ((i / 2) % 3));
    p.head = {0.9f, 0.75f, 0.6f};
    palettes.push_back(p);
  }

  fs::create_directories(dir);
  DatasetSplit split;
  split.role = Role::train;
  for (int id = 0; id < identities; ++id) {
    const Palette& pal = palettes[static_cast<std::size_t>(id)];
    const int silhouette = id % 4;      // rectangle, ellipse, triangle, diamond torso
    const bool striped = (id / 4) % 2;  // horizontal stripes on the torso
    for (int n = 0; n < per_identity; ++n) {
      const int cam = n % cameras;
      Image img = make_image(3, height, width);
      const float bg_level = 0.75f + 0.15f * static_cast<float>(cam) / static_cast<float>(std::max(1, cameras - 1));
      const std::array<float, 3> bg{bg_level, bg_level * (cam % 2 ? 0.92f : 1.0f), bg_level * (cam % 2 ? 0.85f : 0.97f)};
      for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x) paint(img, y, x, bg);

      const double scale = 0.9 + 0.2 * unit(rng);
      const double cx = width * (0.5 + 0.08 * (unit(rng) - 0.5));
      const double top = height * (0.06 + 0.04 * unit(rng));
      const double head_r = 0.09 * width * scale;
      const double torso_top = top + 2.2 * head_r, torso_h = 0.38 * height * scale, torso_w = 0.55 * width * scale;
      const double legs_top = torso_top + torso_h, legs_h = 0.42 * height * scale, legs_w = 0.4 * width * scale;
      for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x) {
          const double dx = x + 0.5 - cx, yy = y + 0.5;
          // head
          const double hy = yy - (top + head_r);
          if (dx * dx + hy * hy <= head_r * head_r) paint(img, y, x, pal.head);
          // torso
          if (yy >= torso_top && yy < torso_top + torso_h) {
            const double t = (yy - torso_top) / torso_h;  // 0 at top
            const double u = std::abs(dx) / (torso_w / 2);
            bool inside = false;
            switch (silhouette) {
              case 0: inside = u <= 1.0; break;
              case 1: inside = u * u + (2 * t - 1) * (2 * t - 1) <= 1.0; break;
              case 2: inside = u <= 0.25 + 0.75 * t; break;
              default: inside = u <= 1.0 - std::abs(2 * t - 1) * 0.8; break;
            }
            if (inside) {
              auto c = pal.top;
              if (striped && static_cast<int>(t * 6) % 2 == 1) c = {c[0] * 0.25f, c[1] * 0.25f, c[2] * 0.25f};
              paint(img, y, x, c);
            }
          }
          // legs
          if (yy >= legs_top && yy < legs_top + legs_h && std::abs(dx) <= legs_w / 2 &&
              std::abs(dx) >= (silhouette % 2 ? 0.0 : legs_w * 0.08))
            paint(img, y, x, pal.bottom);
        }
      for (Index i = 0; i < img.size(); ++i) img.data[i] = std::clamp(img.data[i] + noise(rng), 0.0f, 1.0f);

      char name[64];
      std::snprintf(name, sizeof(name), "id%03d_c%d_%03d.png", id, cam, n);
      const fs::path path = fs::absolute(dir) / name;
      save_image(path, img);
      PersonSample s;
      s.image_path = path;
      s.pid = id;
      s.camid = cam;
      s.domain = Domain::real;
      s.role = Role::train;
      split.samples.push_back(s);
    }
  }
  split.reindex();
  return split;
}

}  // namespace cenet
