#include "sfmnerf/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "sfmnerf/config.hpp"
#include "sfmnerf/error.hpp"

namespace fs = std::filesystem;

namespace sfmnerf {
namespace {

std::string stem_of(const std::string& name) { return fs::path(name).stem().string(); }

bool in_image(const Vec2& p, int width, int height) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1.0 && p.y() <= height - 1.0;
}

}  // namespace

std::vector<MatchSet> read_matches(const std::string& path, int width, int height) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open match file " + path);
  }
  std::vector<MatchSet> sets;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    std::istringstream ss(line);
    std::string head;
    ss >> head;
    if (head == "triplet") {
      MatchSet set;
      if (!(ss >> set.ref >> set.i >> set.j)) {
        throw ParseError(path + ": triplet header needs three image names", line_no);
      }
      sets.push_back(std::move(set));
      continue;
    }
    if (sets.empty()) {
      throw ParseError(path + ": match line before any triplet header", line_no);
    }
    std::istringstream nums(line);
    double v[6];
    for (double& x : v) {
      if (!(nums >> x)) {
        throw ParseError(path + ": expected six coordinates", line_no);
      }
    }
    std::string extra;
    if (nums >> extra) {
      throw ParseError(path + ": trailing content after six coordinates", line_no);
    }
    MatchTriple m{Vec2(v[0], v[1]), Vec2(v[2], v[3]), Vec2(v[4], v[5])};
    if (width > 0 && height > 0 &&
        !(in_image(m.ref, width, height) && in_image(m.i, width, height) &&
          in_image(m.j, width, height))) {
      throw ParseError(path + ": coordinate outside the image", line_no);
    }
    sets.back().matches.push_back(m);
  }
  return sets;
}

void write_matches(const std::string& path, const std::vector<MatchSet>& sets) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write match file " + path);
  }
  out.precision(17);
  for (const MatchSet& s : sets) {
    out << "triplet " << s.ref << ' ' << s.i << ' ' << s.j << '\n';
    for (const MatchTriple& m : s.matches) {
      out << m.ref.x() << ' ' << m.ref.y() << ' ' << m.i.x() << ' ' << m.i.y() << ' ' << m.j.x()
          << ' ' << m.j.y() << '\n';
    }
  }
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

int SceneDataset::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

void SceneDataset::validate() const {
  if (images.size() != names.size() || cameras.size() != names.size() ||
      (!depths.empty() && depths.size() != names.size())) {
    throw ShapeMismatchError("dataset lists differ in length");
  }
  for (std::size_t k = 0; k < images.size(); ++k) {
    images[k].validate();
    cameras[k].intrinsics.validate();
    cameras[k].pose.validate();
    if (cameras[k].intrinsics.width != images[k].width() ||
        cameras[k].intrinsics.height != images[k].height()) {
      throw ShapeMismatchError("camera size differs from image " + names[k]);
    }
    if (!depths.empty() &&
        (depths[k].rows() != images[k].height() || depths[k].cols() != images[k].width())) {
      throw ShapeMismatchError("depth map size differs from image " + names[k]);
    }
  }
  for (int t : test) {
    if (std::find(train.begin(), train.end(), t) != train.end()) {
      throw ConfigError("train and test splits overlap");
    }
  }
  if (!(near >= 0.0) || !(far > near)) {
    throw ConfigError("dataset needs 0 <= near < far");
  }
}

void assign_split(SceneDataset& ds) {
  ds.train.clear();
  ds.test.clear();
  for (int k = 0; k < static_cast<int>(ds.images.size()); ++k) {
    ((k + 1) % 8 == 0 ? ds.test : ds.train).push_back(k);
  }
}

SceneDataset load_dataset(const std::string& root) {
  const fs::path dir(root);
  if (!fs::is_directory(dir / "images")) {
    throw IoError("dataset " + root + " has no images/ directory");
  }
  if (!fs::exists(dir / "poses.txt")) {
    throw IoError("dataset " + root + " has no poses.txt");
  }
  SceneDataset ds;
  if (fs::exists(dir / "scene.cfg")) {
    const KeyValues cfg = KeyValues::read((dir / "scene.cfg").string());
    ds.near = cfg.get_double("near", ds.near);
    ds.far = cfg.get_double("far", ds.far);
    ds.diameter = cfg.get_double("diameter", ds.diameter);
    ds.patch_size = static_cast<int>(cfg.get_int("patch_size", ds.patch_size));
    ds.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  }
  for (const auto& entry : fs::directory_iterator(dir / "images")) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      ds.names.push_back(entry.path().filename().string());
    }
  }
  std::sort(ds.names.begin(), ds.names.end());
  if (ds.names.empty()) {
    throw IoError("dataset " + root + " contains no PNG images");
  }
  std::map<std::string, PoseRecord> poses;
  for (PoseRecord& rec : read_pose_file((dir / "poses.txt").string())) {
    poses[rec.image] = std::move(rec);
  }
  for (const std::string& name : ds.names) {
    const auto it = poses.find(name);
    if (it == poses.end()) {
      throw IoError("poses.txt has no entry for " + name);
    }
    Image img = read_png((dir / "images" / name).string());
    if (img.channels() != 3) {
      throw ShapeMismatchError("image " + name + " is not RGB");
    }
    SceneCamera cam;
    cam.pose = it->second.pose;
    cam.intrinsics = {it->second.fx, it->second.fy, it->second.cx, it->second.cy, img.width(),
                      img.height()};
    ds.cameras.push_back(cam);
    ds.images.push_back(std::move(img));
  }
  if (fs::is_directory(dir / "depth")) {
    for (const std::string& name : ds.names) {
      const fs::path p = dir / "depth" / (stem_of(name) + ".pfm");
      if (!fs::exists(p)) {
        ds.depths.clear();
        break;
      }
      ds.depths.push_back(read_pfm(p.string()));
    }
  }
  if (fs::exists(dir / "matches.txt")) {
    ds.matches = read_matches((dir / "matches.txt").string(), ds.images[0].width(),
                              ds.images[0].height());
    for (const MatchSet& s : ds.matches) {
      for (const std::string* n : {&s.ref, &s.i, &s.j}) {
        if (ds.index_of(*n) < 0) {
          throw IoError("matches.txt names unknown image " + *n);
        }
      }
    }
  }
  assign_split(ds);
  ds.validate();
  return ds;
}

void write_dataset(const std::string& root, const SceneDataset& ds) {
  ds.validate();
  const fs::path dir(root);
  fs::create_directories(dir / "images");
  std::vector<PoseRecord> records;
  for (std::size_t k = 0; k < ds.size(); ++k) {
    write_png((dir / "images" / ds.names[k]).string(), ds.images[k]);
    const Intrinsics& in = ds.cameras[k].intrinsics;
    records.push_back({ds.names[k], ds.cameras[k].pose, in.fx, in.fy, in.cx, in.cy});
  }
  write_pose_file((dir / "poses.txt").string(), records);
  if (!ds.depths.empty()) {
    fs::create_directories(dir / "depth");
    for (std::size_t k = 0; k < ds.size(); ++k) {
      write_pfm((dir / "depth" / (stem_of(ds.names[k]) + ".pfm")).string(), ds.depths[k]);
    }
  }
  if (!ds.matches.empty()) {
    write_matches((dir / "matches.txt").string(), ds.matches);
  }
  KeyValues cfg;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", ds.near);
  cfg.set("near", buf);
  std::snprintf(buf, sizeof(buf), "%.17g", ds.far);
  cfg.set("far", buf);
  std::snprintf(buf, sizeof(buf), "%.17g", ds.diameter);
  cfg.set("diameter", buf);
  cfg.set("patch_size", std::to_string(ds.patch_size));
  cfg.set("seed", std::to_string(ds.seed));
  std::ofstream out(dir / "scene.cfg");
  out << cfg.to_string();
  if (!out) {
    throw IoError("cannot write scene.cfg in " + root);
  }
}

TripletSelection build_triplets(const SceneDataset& ds, const std::vector<MatchSet>& sets) {
  std::vector<char> is_train(ds.size(), 0);
  for (int t : ds.train) {
    is_train[static_cast<std::size_t>(t)] = 1;
  }
  // (ref, i, j) with i < j -> matches oriented with ref first.
  std::map<std::tuple<int, int, int>, std::vector<MatchTriple>> pools;
  for (const MatchSet& s : sets) {
    const int idx[3] = {ds.index_of(s.ref), ds.index_of(s.i), ds.index_of(s.j)};
    if (idx[0] < 0 || idx[1] < 0 || idx[2] < 0 || idx[0] == idx[1] || idx[0] == idx[2] ||
        idx[1] == idx[2]) {
      continue;
    }
    if (!is_train[idx[0]] || !is_train[idx[1]] || !is_train[idx[2]]) {
      continue;
    }
    for (int r = 0; r < 3; ++r) {
      int a = (r + 1) % 3;
      int b = (r + 2) % 3;
      if (idx[a] > idx[b]) {
        std::swap(a, b);
      }
      auto& pool = pools[{idx[r], idx[a], idx[b]}];
      for (const MatchTriple& m : s.matches) {
        const Vec2 pts[3] = {m.ref, m.i, m.j};
        bool ok = true;
        for (int q : {r, a, b}) {
          const Image& img = ds.images[static_cast<std::size_t>(idx[q])];
          ok = ok && in_image(pts[q], img.width(), img.height());
        }
        if (ok) {
          pool.push_back({pts[r], pts[a], pts[b]});
        }
      }
    }
  }
  TripletSelection out;
  for (int ref : ds.train) {
    const std::vector<MatchTriple>* best = nullptr;
    std::tuple<int, int, int> best_key;
    for (const auto& [key, pool] : pools) {
      if (std::get<0>(key) == ref && (!best || pool.size() > best->size())) {
        best = &pool;
        best_key = key;
      }
    }
    if (!best || best->size() < kMinTripletMatches) {
      out.warnings.push_back("no triplet with at least " + std::to_string(kMinTripletMatches) +
                             " matches for reference image " + ds.names[static_cast<std::size_t>(ref)]);
      continue;
    }
    TrainTriplet t;
    t.ref = ref;
    t.i = std::get<1>(best_key);
    t.j = std::get<2>(best_key);
    t.matches = *best;
    std::vector<Vec2> ref_pts;
    for (const MatchTriple& m : t.matches) {
      ref_pts.push_back(m.ref);
    }
    t.mask = mask_rect_from_matches(ref_pts);
    out.triplets.push_back(std::move(t));
  }
  return out;
}

SceneDataset make_synthetic_dataset(const SyntheticScene& scene, const SyntheticOptions& options) {
  scene.validate();
  SceneDataset ds;
  ds.near = scene.near;
  ds.far = scene.far;
  ds.diameter = scene.diameter;
  ds.patch_size = options.patch_size;
  ds.seed = options.seed;
  for (std::size_t k = 0; k < scene.cameras.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "%03zu.png", k);
    ds.names.push_back(name);
    GroundTruthView gt = render_ground_truth(scene, scene.cameras[k], options.supersample);
    ds.images.push_back(std::move(gt.color));
    ds.depths.push_back(std::move(gt.depth));
    ds.cameras.push_back(scene.cameras[k]);
  }
  assign_split(ds);
  for (int ref : ds.train) {
    const Vec3 c = ds.cameras[static_cast<std::size_t>(ref)].pose.center();
    std::vector<std::pair<double, int>> by_distance;
    for (int other : ds.train) {
      if (other != ref) {
        by_distance.push_back({(ds.cameras[static_cast<std::size_t>(other)].pose.center() - c).norm(), other});
      }
    }
    if (by_distance.size() < 2) {
      break;
    }
    std::sort(by_distance.begin(), by_distance.end());
    int i = by_distance[0].second;
    int j = by_distance[1].second;
    if (i > j) {
      std::swap(i, j);
    }
    std::seed_seq seq{static_cast<std::uint64_t>(options.seed), static_cast<std::uint64_t>(ref),
                      std::uint64_t{0x6d61746368}};
    Rng rng(seq);
    MatchSet set{ds.names[static_cast<std::size_t>(ref)], ds.names[static_cast<std::size_t>(i)],
                 ds.names[static_cast<std::size_t>(j)], {}};
    set.matches = toy_match(scene, ds.cameras[static_cast<std::size_t>(ref)],
                            ds.cameras[static_cast<std::size_t>(i)],
                            ds.cameras[static_cast<std::size_t>(j)], options.match_points,
                            options.sigma_px, rng);
    ds.matches.push_back(std::move(set));
  }
  ds.validate();
  return ds;
}

}  // namespace sfmnerf
