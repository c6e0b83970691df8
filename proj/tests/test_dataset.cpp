#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fsce/dataset.hpp"

using namespace fsce;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_cfg(int images = 30) {
  GeneratorConfig cfg;
  cfg.num_images = images;
  cfg.class_shapes = supported_shapes();
  cfg.image_size = 64;
  return cfg;
}

std::string temp_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("fsce_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Generator, DeterministicForFixedSeed) {
  const auto a = generate_synthetic(small_cfg(), 7);
  const auto b = generate_synthetic(small_cfg(), 7);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].image.pix, b.records[i].image.pix);
    ASSERT_EQ(a.records[i].anns.size(), b.records[i].anns.size());
    for (size_t k = 0; k < a.records[i].anns.size(); ++k) {
      EXPECT_EQ(a.records[i].anns[k].class_id, b.records[i].anns[k].class_id);
      EXPECT_DOUBLE_EQ(a.records[i].anns[k].box.x1, b.records[i].anns[k].box.x1);
    }
  }
}

TEST(Generator, DifferentSeedsDiffer) {
  const auto a = generate_synthetic(small_cfg(), 7);
  const auto b = generate_synthetic(small_cfg(), 8);
  bool any_diff = false;
  for (size_t i = 0; i < a.records.size() && !any_diff; ++i)
    any_diff = a.records[i].image.pix != b.records[i].image.pix;
  EXPECT_TRUE(any_diff);
}

TEST(Generator, ZeroImagesEmptyDataset) {
  auto cfg = small_cfg(0);
  const auto ds = generate_synthetic(cfg, 1);
  EXPECT_TRUE(ds.records.empty());
  EXPECT_EQ(ds.classes.names.size(), supported_shapes().size());
}

TEST(Generator, RequiresTwoClasses) {
  auto cfg = small_cfg();
  cfg.class_shapes = {"square"};
  EXPECT_THROW(generate_synthetic(cfg, 1), std::invalid_argument);
}

TEST(Generator, RejectsUnknownShape) {
  auto cfg = small_cfg();
  cfg.class_shapes = {"square", "pentagon"};
  EXPECT_THROW(generate_synthetic(cfg, 1), std::invalid_argument);
}

TEST(Generator, ObjectCountsAndSizesInRange) {
  const auto ds = generate_synthetic(small_cfg(100), 3);
  for (const auto& rec : ds.records) {
    EXPECT_LE(rec.anns.size(), 4u);
    for (const auto& ann : rec.anns) {
      EXPECT_GE(ann.box.x1, 0);
      EXPECT_LE(ann.box.x2, 64);
      EXPECT_LE(ann.box.width(), 48);
      EXPECT_LE(ann.box.height(), 48);
    }
  }
}

TEST(Generator, PairwiseOverlapBounded) {
  const auto ds = generate_synthetic(small_cfg(100), 11);
  for (const auto& rec : ds.records)
    for (size_t i = 0; i < rec.anns.size(); ++i)
      for (size_t j = i + 1; j < rec.anns.size(); ++j)
        EXPECT_LE(iou(rec.anns[i].box, rec.anns[j].box), 0.3 + 1e-12);
}

TEST(Generator, PerClassCountsNearUniform) {
  // 500 images, 8 classes; seed fixed, measured tolerance +-20% of uniform
  const auto ds = generate_synthetic(small_cfg(500), 42);
  std::map<int, int> counts;
  int total = 0;
  for (const auto& rec : ds.records)
    for (const auto& ann : rec.anns) {
      counts[ann.class_id]++;
      ++total;
    }
  const double uniform = static_cast<double>(total) / 8.0;
  for (int c = 0; c < 8; ++c) {
    EXPECT_GE(counts[c], 0.8 * uniform) << "class " << c;
    EXPECT_LE(counts[c], 1.2 * uniform) << "class " << c;
  }
}

TEST(Generator, BoxesTightlyBoundShapePixels) {
  // single-object images: shape pixels are cleanly separable from the
  // background by intensity (>0.3 vs <0.15)
  auto cfg = small_cfg(40);
  cfg.min_objects = cfg.max_objects = 1;
  const auto ds = generate_synthetic(cfg, 5);
  for (const auto& rec : ds.records) {
    ASSERT_EQ(rec.anns.size(), 1u);
    const Box& b = rec.anns[0].box;
    int lit_min_x = 1 << 20, lit_max_x = -1, lit_min_y = 1 << 20, lit_max_y = -1;
    for (int y = 0; y < rec.image.height; ++y)
      for (int x = 0; x < rec.image.width; ++x)
        if (rec.image.at(y, x) > 0.3f) {
          lit_min_x = std::min(lit_min_x, x);
          lit_max_x = std::max(lit_max_x, x);
          lit_min_y = std::min(lit_min_y, y);
          lit_max_y = std::max(lit_max_y, y);
        }
    ASSERT_GE(lit_max_x, 0) << "no shape pixels drawn";
    // tight: the box equals the lit-pixel bounding box...
    EXPECT_DOUBLE_EQ(b.x1, lit_min_x);
    EXPECT_DOUBLE_EQ(b.y1, lit_min_y);
    EXPECT_DOUBLE_EQ(b.x2, lit_max_x + 1);
    EXPECT_DOUBLE_EQ(b.y2, lit_max_y + 1);
    // ...so growing by 1px strictly contains, shrinking by 1px does not
    EXPECT_LT(b.x1 - 1, lit_min_x);
    EXPECT_GT(b.x2 + 1, lit_max_x + 1);
    EXPECT_FALSE(b.x1 + 1 <= lit_min_x && b.x2 - 1 >= lit_max_x + 1 &&
                 b.y1 + 1 <= lit_min_y && b.y2 - 1 >= lit_max_y + 1);
  }
}

TEST(KShotSplit, ExactCountsPerClass) {
  const auto ds = generate_synthetic(small_cfg(200), 9);
  for (int k : {1, 2, 3, 5, 10}) {
    const auto split = build_kshot_split(ds, {6, 7}, k, 3);
    // recount from scratch
    std::map<int, int> counts;
    for (const auto& rec : split.data.records)
      for (const auto& ann : rec.anns) counts[ann.class_id]++;
    for (int c = 0; c < 8; ++c) {
      EXPECT_EQ(counts[c], k) << "class " << c << " k " << k;
      EXPECT_EQ(split.per_class_counts.at(c), k);
    }
  }
}

TEST(KShotSplit, DeterministicForFixedSeed) {
  const auto ds = generate_synthetic(small_cfg(120), 4);
  const auto a = build_kshot_split(ds, {0, 1}, 5, 77);
  const auto b = build_kshot_split(ds, {0, 1}, 5, 77);
  ASSERT_EQ(a.data.records.size(), b.data.records.size());
  for (size_t i = 0; i < a.data.records.size(); ++i) {
    EXPECT_EQ(a.data.records[i].image_path, b.data.records[i].image_path);
    ASSERT_EQ(a.data.records[i].anns.size(), b.data.records[i].anns.size());
  }
  const auto c = build_kshot_split(ds, {0, 1}, 5, 78);
  bool differs = a.data.records.size() != c.data.records.size();
  for (size_t i = 0; !differs && i < a.data.records.size(); ++i)
    differs = a.data.records[i].anns.size() != c.data.records[i].anns.size() ||
              a.data.records[i].image.pix != c.data.records[i].image.pix;
  EXPECT_TRUE(differs);  // different seed picks a different subset
}

TEST(KShotSplit, ErrorNamesStarvedClass) {
  auto cfg = small_cfg(3);
  const auto ds = generate_synthetic(cfg, 2);
  try {
    build_kshot_split(ds, {}, 50, 1);
    FAIL() << "expected failure";
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    bool names_some_class = false;
    for (const auto& name : supported_shapes())
      if (what.find(name) != std::string::npos) names_some_class = true;
    EXPECT_TRUE(names_some_class) << what;
  }
}

TEST(KShotSplit, NovelPartitionRecorded) {
  const auto ds = generate_synthetic(small_cfg(150), 6);
  const auto split = build_kshot_split(ds, {4, 2}, 3, 5);
  EXPECT_TRUE(split.data.classes.is_novel(4));
  EXPECT_TRUE(split.data.classes.is_novel(2));
  EXPECT_FALSE(split.data.classes.is_novel(0));
  EXPECT_EQ(split.data.classes.base_ids().size(), 6u);
}

TEST(BaseTrainingSet, PartitionIntegrity) {
  const auto ds = generate_synthetic(small_cfg(150), 10);
  const std::vector<int> novel = {6, 7};
  const auto base = make_base_training_set(ds, novel);
  for (const auto& rec : base.records) {
    EXPECT_FALSE(rec.anns.empty());
    for (const auto& ann : rec.anns) {
      EXPECT_NE(ann.class_id, 6);
      EXPECT_NE(ann.class_id, 7);
    }
  }
}

TEST(DiskIo, SaveLoadRoundTrip) {
  const std::string dir = temp_dir("roundtrip");
  auto ds = generate_synthetic(small_cfg(12), 21);
  save_dataset(ds, dir, "full");
  const auto loaded = load_dataset(dir + "/full.txt");
  ASSERT_EQ(loaded.records.size(), ds.records.size());
  EXPECT_EQ(loaded.classes.names, ds.classes.names);
  for (size_t i = 0; i < ds.records.size(); ++i) {
    ASSERT_EQ(loaded.records[i].anns.size(), ds.records[i].anns.size());
    for (size_t k = 0; k < ds.records[i].anns.size(); ++k) {
      EXPECT_EQ(loaded.records[i].anns[k].class_id, ds.records[i].anns[k].class_id);
      EXPECT_DOUBLE_EQ(loaded.records[i].anns[k].box.x1, ds.records[i].anns[k].box.x1);
      EXPECT_DOUBLE_EQ(loaded.records[i].anns[k].box.y2, ds.records[i].anns[k].box.y2);
    }
    // 8-bit quantization: at most half a level plus float rounding
    ASSERT_EQ(loaded.records[i].image.pix.size(), ds.records[i].image.pix.size());
    for (size_t p = 0; p < ds.records[i].image.pix.size(); ++p)
      EXPECT_NEAR(loaded.records[i].image.pix[p], ds.records[i].image.pix[p], 0.51f / 255.f);
  }
  fs::remove_all(dir);
}

TEST(DiskIo, GenerateTwiceByteIdentical) {
  const std::string d1 = temp_dir("gen1"), d2 = temp_dir("gen2");
  auto a = generate_synthetic(small_cfg(10), 33);
  auto b = generate_synthetic(small_cfg(10), 33);
  save_dataset(a, d1, "full");
  save_dataset(b, d2, "full");
  EXPECT_EQ(slurp(d1 + "/full.txt"), slurp(d2 + "/full.txt"));
  EXPECT_EQ(slurp(d1 + "/classes.txt"), slurp(d2 + "/classes.txt"));
  for (const auto& rec : a.records)
    EXPECT_EQ(slurp(d1 + "/" + rec.image_path), slurp(d2 + "/" + rec.image_path));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(DiskIo, MissingFileError) {
  EXPECT_THROW(load_dataset("/nonexistent/path/full.txt"), std::runtime_error);
}

TEST(DiskIo, AnnotationLineFormat) {
  const std::string dir = temp_dir("format");
  auto cfg = small_cfg(3);
  cfg.min_objects = cfg.max_objects = 2;
  auto ds = generate_synthetic(cfg, 2);
  save_dataset(ds, dir, "full");
  std::ifstream f(dir + "/full.txt");
  std::string line;
  ASSERT_TRUE(std::getline(f, line));
  // "<path> <cls> <x1> <y1> <x2> <y2> ..." with integer coordinates
  std::istringstream ss(line);
  std::string path;
  ss >> path;
  EXPECT_EQ(path.rfind("images/", 0), 0u);
  int cls, x1, y1, x2, y2;
  int objects = 0;
  while (ss >> cls >> x1 >> y1 >> x2 >> y2) {
    EXPECT_GE(cls, 0);
    EXPECT_LT(x1, x2);
    EXPECT_LT(y1, y2);
    ++objects;
  }
  EXPECT_GT(objects, 0);
  fs::remove_all(dir);
}
