#pragma once

#include <string>
#include <vector>

#include "sfmnerf/geometry.hpp"
#include "sfmnerf/image.hpp"
#include "sfmnerf/scene.hpp"

namespace sfmnerf {

// Correspondences shared by three named images.
struct MatchSet {
  std::string ref;
  std::string i;
  std::string j;
  std::vector<MatchTriple> matches;
};

// Sections start with "triplet REF I J" (image names) followed by lines of
// "ref_x ref_y i_x i_y j_x j_y". Blank lines and '#' comments are skipped.
// With width/height > 0 every coordinate must lie inside the image.
std::vector<MatchSet> read_matches(const std::string& path, int width = 0, int height = 0);
void write_matches(const std::string& path, const std::vector<MatchSet>& sets);

struct SceneDataset {
  std::vector<std::string> names;  // sorted image file names
  std::vector<Image> images;
  std::vector<SceneCamera> cameras;
  double near = 2.0;
  double far = 6.0;
  double diameter = 1.0;
  int patch_size = 48;
  std::uint64_t seed = 0;
  std::vector<Matrix> depths;  // ground truth, empty unless synthetic
  std::vector<MatchSet> matches;
  std::vector<int> train;
  std::vector<int> test;

  std::size_t size() const { return images.size(); }
  int index_of(const std::string& name) const;  // -1 when absent
  void validate() const;
};

// Image k (sorted by file name) goes to the test split when (k + 1) % 8 == 0.
void assign_split(SceneDataset& ds);

// Reads images/*.png, poses.txt, scene.cfg and, when present, matches.txt
// and depth/*.pfm.
SceneDataset load_dataset(const std::string& root);
void write_dataset(const std::string& root, const SceneDataset& ds);

struct TrainTriplet {
  int ref = -1;
  int i = -1;
  int j = -1;
  std::vector<MatchTriple> matches;
  MaskRect mask;
};

inline constexpr std::size_t kMinTripletMatches = 8;

struct TripletSelection {
  std::vector<TrainTriplet> triplets;
  std::vector<std::string> warnings;
};

// For every training image, the pair of training images sharing the most
// matches with it. Pairs with fewer than kMinTripletMatches are rejected.
TripletSelection build_triplets(const SceneDataset& ds, const std::vector<MatchSet>& sets);

// Synthetic dataset: ground-truth renders of every preset camera, depth maps
// and toy matches of each training image against its two nearest training
// cameras.
struct SyntheticOptions {
  int supersample = 3;
  int match_points = 600;
  double sigma_px = 0.0;
  int patch_size = 48;
  std::uint64_t seed = 0;
};
SceneDataset make_synthetic_dataset(const SyntheticScene& scene, const SyntheticOptions& options);

}  // namespace sfmnerf
