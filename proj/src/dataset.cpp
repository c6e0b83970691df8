#include "fsce/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fsce/rng.hpp"

namespace fs = std::filesystem;

namespace fsce {

int ClassRegistry::id_of(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

bool ClassRegistry::is_novel(int id) const {
  return std::find(novel_ids.begin(), novel_ids.end(), id) != novel_ids.end();
}

std::vector<int> ClassRegistry::base_ids() const {
  std::vector<int> out;
  for (size_t i = 0; i < names.size(); ++i)
    if (!is_novel(static_cast<int>(i))) out.push_back(static_cast<int>(i));
  return out;
}

int DetectionDataset::num_instances(int class_id) const {
  int n = 0;
  for (const auto& rec : records)
    for (const auto& ann : rec.anns)
      if (ann.class_id == class_id) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Shape drawing
// ---------------------------------------------------------------------------

namespace {

enum class ShapeKind { kSquare, kCircle, kTriangle, kCross, kRing, kDiamond, kHStripe, kVStripe };

const std::vector<std::string> kShapeNames = {"square", "circle", "triangle", "cross",
                                              "ring",   "diamond", "hstripe", "vstripe"};

ShapeKind shape_from_name(const std::string& name) {
  for (size_t i = 0; i < kShapeNames.size(); ++i)
    if (kShapeNames[i] == name) return static_cast<ShapeKind>(i);
  throw std::invalid_argument("unknown shape class '" + name + "'");
}

// s x s boolean mask; local pixel (i,j) covers [j,j+1]x[i,i+1].
std::vector<uint8_t> draw_mask(ShapeKind kind, int s) {
  std::vector<uint8_t> m(static_cast<size_t>(s) * s, 0);
  const double c = s / 2.0;
  const double r = s / 2.0;
  auto set = [&](int i, int j) { m[static_cast<size_t>(i) * s + j] = 1; };
  for (int i = 0; i < s; ++i) {
    const double py = i + 0.5;
    for (int j = 0; j < s; ++j) {
      const double px = j + 0.5;
      const double dx = px - c, dy = py - c;
      bool on = false;
      switch (kind) {
        case ShapeKind::kSquare:
          on = true;
          break;
        case ShapeKind::kCircle:
          on = dx * dx + dy * dy <= (r - 0.25) * (r - 0.25);
          break;
        case ShapeKind::kTriangle:
          on = std::abs(dx) <= (py / s) * r;
          break;
        case ShapeKind::kCross:
          on = std::abs(dx) <= std::max(1.0, 0.17 * s) || std::abs(dy) <= std::max(1.0, 0.17 * s);
          break;
        case ShapeKind::kRing: {
          const double d2 = dx * dx + dy * dy;
          const double rin = r - std::max(2.0, 0.22 * s);
          on = d2 <= (r - 0.25) * (r - 0.25) && d2 >= rin * rin;
          break;
        }
        case ShapeKind::kDiamond:
          on = std::abs(dx) + std::abs(dy) <= r;
          break;
        case ShapeKind::kHStripe: {
          const int bar = std::max(2, s / 5);
          on = (i / bar) % 2 == 0;
          break;
        }
        case ShapeKind::kVStripe: {
          const int bar = std::max(2, s / 5);
          on = (j / bar) % 2 == 0;
          break;
        }
      }
      if (on) set(i, j);
    }
  }
  return m;
}

struct MaskBounds {
  int i0, i1, j0, j1;  // inclusive pixel bounds
  bool empty;
};

MaskBounds mask_bounds(const std::vector<uint8_t>& m, int s) {
  MaskBounds b{s, -1, s, -1, true};
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      if (m[static_cast<size_t>(i) * s + j]) {
        b.empty = false;
        b.i0 = std::min(b.i0, i);
        b.i1 = std::max(b.i1, i);
        b.j0 = std::min(b.j0, j);
        b.j1 = std::max(b.j1, j);
      }
  return b;
}

}  // namespace

const std::vector<std::string>& supported_shapes() { return kShapeNames; }

DetectionDataset generate_synthetic(const GeneratorConfig& cfg, uint64_t seed) {
  if (cfg.class_shapes.size() < 2 && cfg.num_images > 0)
    throw std::invalid_argument("generate_synthetic: need at least 2 shape classes");
  for (const auto& n : cfg.class_shapes) shape_from_name(n);  // validate early
  if (cfg.min_size < 4 || cfg.max_size > cfg.image_size - 2)
    throw std::invalid_argument("generate_synthetic: object size range incompatible with image");

  DetectionDataset ds;
  ds.classes.names = cfg.class_shapes;

  Rng rng(seed);
  for (int n = 0; n < cfg.num_images; ++n) {
    ImageRecord rec;
    GrayImage& img = rec.image;
    img = GrayImage(cfg.image_size, cfg.image_size);
    for (auto& p : img.pix) p = static_cast<float>(rng.uniform(0.0, 0.12));

    const int want = rng.uniform_int(cfg.min_objects, cfg.max_objects);
    std::vector<Box> placed;
    for (int obj = 0; obj < want; ++obj) {
      bool ok = false;
      for (int attempt = 0; attempt < cfg.placement_retries && !ok; ++attempt) {
        const int cls = rng.uniform_int(0, static_cast<int>(cfg.class_shapes.size()) - 1);
        const int s = rng.uniform_int(cfg.min_size, cfg.max_size);
        const int x0 = rng.uniform_int(1, cfg.image_size - s - 1);
        const int y0 = rng.uniform_int(1, cfg.image_size - s - 1);
        const auto mask = draw_mask(shape_from_name(cfg.class_shapes[cls]), s);
        const auto mb = mask_bounds(mask, s);
        if (mb.empty) continue;
        const Box tight(x0 + mb.j0, y0 + mb.i0, x0 + mb.j1 + 1, y0 + mb.i1 + 1);
        bool overlap = false;
        for (const auto& other : placed)
          if (iou(tight, other) > cfg.max_pairwise_iou) {
            overlap = true;
            break;
          }
        if (overlap) continue;

        const double intensity = rng.uniform(0.45, 0.95);
        for (int i = 0; i < s; ++i)
          for (int j = 0; j < s; ++j)
            if (mask[static_cast<size_t>(i) * s + j]) {
              float v = static_cast<float>(intensity + rng.uniform(-0.05, 0.05));
              img.at(y0 + i, x0 + j) = std::clamp(v, 0.f, 1.f);
            }
        placed.push_back(tight);
        rec.anns.push_back({tight, cls});
        ok = true;
      }
      // bounded retries exhausted: emit the image with fewer objects
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Split protocol
// ---------------------------------------------------------------------------

KShotSplit build_kshot_split(const DetectionDataset& dataset, const std::vector<int>& novel_classes,
                             int k, uint64_t seed) {
  if (k <= 0) throw std::invalid_argument("build_kshot_split: k must be positive");

  const int num_classes = static_cast<int>(dataset.classes.names.size());
  // instance index: per class, the (image, annotation) locations
  std::vector<std::vector<std::pair<int, int>>> instances(num_classes);
  for (size_t r = 0; r < dataset.records.size(); ++r)
    for (size_t a = 0; a < dataset.records[r].anns.size(); ++a) {
      const int c = dataset.records[r].anns[a].class_id;
      if (c < 0 || c >= num_classes)
        throw std::runtime_error("build_kshot_split: annotation with unregistered class id " +
                                 std::to_string(c));
      instances[c].push_back({static_cast<int>(r), static_cast<int>(a)});
    }
  for (int c = 0; c < num_classes; ++c)
    if (static_cast<int>(instances[c].size()) < k)
      throw std::runtime_error("build_kshot_split: class '" + dataset.classes.names[c] +
                               "' has only " + std::to_string(instances[c].size()) +
                               " instances, need " + std::to_string(k));

  Rng rng(seed);
  std::set<std::pair<int, int>> selected;
  for (int c = 0; c < num_classes; ++c) {
    auto pool = instances[c];
    Rng class_rng = rng.fork(Rng::splitmix64(static_cast<uint64_t>(c) + 101));
    class_rng.shuffle(pool);
    for (int i = 0; i < k; ++i) selected.insert(pool[i]);
  }

  KShotSplit split;
  split.k = k;
  split.seed = seed;
  split.data.classes = dataset.classes;
  split.data.classes.novel_ids = novel_classes;
  for (size_t r = 0; r < dataset.records.size(); ++r) {
    ImageRecord rec;
    rec.image_path = dataset.records[r].image_path;
    rec.image = dataset.records[r].image;
    for (size_t a = 0; a < dataset.records[r].anns.size(); ++a)
      if (selected.count({static_cast<int>(r), static_cast<int>(a)}))
        rec.anns.push_back(dataset.records[r].anns[a]);
    if (!rec.anns.empty()) split.data.records.push_back(std::move(rec));
  }
  for (int c = 0; c < num_classes; ++c) split.per_class_counts[c] = 0;
  for (const auto& rec : split.data.records)
    for (const auto& ann : rec.anns) split.per_class_counts[ann.class_id]++;
  return split;
}

DetectionDataset make_base_training_set(const DetectionDataset& dataset,
                                        const std::vector<int>& novel_classes) {
  DetectionDataset out;
  out.classes = dataset.classes;
  out.classes.novel_ids = novel_classes;
  for (const auto& rec : dataset.records) {
    ImageRecord kept;
    kept.image_path = rec.image_path;
    kept.image = rec.image;
    for (const auto& ann : rec.anns)
      if (!out.classes.is_novel(ann.class_id)) kept.anns.push_back(ann);
    if (!kept.anns.empty()) out.records.push_back(std::move(kept));
  }
  return out;
}

DetectionDataset restrict_to_classes(const DetectionDataset& dataset,
                                     const std::vector<int>& keep_classes) {
  DetectionDataset out;
  out.classes = dataset.classes;
  for (const auto& rec : dataset.records) {
    ImageRecord kept;
    kept.image_path = rec.image_path;
    kept.image = rec.image;
    for (const auto& ann : rec.anns)
      if (std::find(keep_classes.begin(), keep_classes.end(), ann.class_id) != keep_classes.end())
        kept.anns.push_back(ann);
    if (!kept.anns.empty()) out.records.push_back(std::move(kept));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disk I/O
// ---------------------------------------------------------------------------

void save_dataset(DetectionDataset& dataset, const std::string& dir,
                  const std::string& split_name, bool write_images) {
  fs::create_directories(fs::path(dir) / "images");

  {
    std::ofstream cf(fs::path(dir) / "classes.txt");
    if (!cf) throw std::runtime_error("save_dataset: cannot write classes.txt under " + dir);
    for (const auto& n : dataset.classes.names) cf << n << "\n";
  }

  std::ofstream af(fs::path(dir) / (split_name + ".txt"));
  if (!af) throw std::runtime_error("save_dataset: cannot write split file under " + dir);
  char name[64];
  int idx = 0;
  for (auto& rec : dataset.records) {
    if (rec.image_path.empty()) {
      std::snprintf(name, sizeof(name), "images/img_%05d.pgm", idx);
      rec.image_path = name;
    }
    ++idx;
    if (write_images) write_pgm(rec.image, (fs::path(dir) / rec.image_path).string());
    af << rec.image_path;
    for (const auto& ann : rec.anns)
      af << " " << ann.class_id << " " << static_cast<long>(std::llround(ann.box.x1)) << " "
         << static_cast<long>(std::llround(ann.box.y1)) << " "
         << static_cast<long>(std::llround(ann.box.x2)) << " "
         << static_cast<long>(std::llround(ann.box.y2));
    af << "\n";
  }
}

DetectionDataset load_dataset(const std::string& annotation_file) {
  const fs::path ann_path(annotation_file);
  if (!fs::exists(ann_path))
    throw std::runtime_error("load_dataset: no such annotation file: " + annotation_file);
  const fs::path dir = ann_path.parent_path();

  DetectionDataset ds;
  {
    std::ifstream cf(dir / "classes.txt");
    if (!cf) throw std::runtime_error("load_dataset: missing classes.txt next to " + annotation_file);
    std::string line;
    while (std::getline(cf, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) ds.classes.names.push_back(line);
    }
  }

  std::ifstream af(annotation_file);
  std::string line;
  while (std::getline(af, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ImageRecord rec;
    ss >> rec.image_path;
    int cls;
    double x1, y1, x2, y2;
    while (ss >> cls >> x1 >> y1 >> x2 >> y2) rec.anns.push_back({Box(x1, y1, x2, y2), cls});
    rec.image = read_pgm((dir / rec.image_path).string());
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace fsce
