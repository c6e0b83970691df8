#ifndef FSCE_DATASET_HPP
#define FSCE_DATASET_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fsce/geometry.hpp"
#include "fsce/image.hpp"

namespace fsce {

struct Annotation {
  Box box;
  int class_id;
};

struct ImageRecord {
  std::string image_path;  // relative to the dataset directory; empty until saved
  GrayImage image;
  std::vector<Annotation> anns;
};

// Class registry with an optional base/novel partition (set by the split
// protocol; empty novel set means no partition yet).
struct ClassRegistry {
  std::vector<std::string> names;  // index = class id
  std::vector<int> novel_ids;

  int id_of(const std::string& name) const;  // -1 if unknown
  bool is_novel(int id) const;
  std::vector<int> base_ids() const;
};

struct DetectionDataset {
  ClassRegistry classes;
  std::vector<ImageRecord> records;

  int num_instances(int class_id) const;
};

struct GeneratorConfig {
  int num_images = 500;
  std::vector<std::string> class_shapes;  // drawn from the supported shape names
  int image_size = 64;
  int min_objects = 1, max_objects = 4;
  int min_size = 12, max_size = 48;
  double max_pairwise_iou = 0.3;
  int placement_retries = 25;
};

// Names accepted in GeneratorConfig::class_shapes.
const std::vector<std::string>& supported_shapes();

// Deterministic synthetic scene generator. Boxes exactly bound the drawn
// shape pixels. Placement that cannot satisfy the overlap constraint after
// bounded retries drops the object.
DetectionDataset generate_synthetic(const GeneratorConfig& cfg, uint64_t seed);

struct KShotSplit {
  int k = 0;
  uint64_t seed = 0;
  DetectionDataset data;                 // selected images, masked annotations
  std::map<int, int> per_class_counts;   // class id -> kept instances (== k)
};

// Balanced K-shot protocol: exactly K instances per class (base and novel)
// chosen by seeded per-class sampling; unselected instances inside selected
// images are masked out. Throws, naming the class, when fewer than K
// instances exist.
KShotSplit build_kshot_split(const DetectionDataset& dataset, const std::vector<int>& novel_classes,
                             int k, uint64_t seed);

// Base-stage training view: images holding at least one base-class
// annotation, with novel-class annotations removed.
DetectionDataset make_base_training_set(const DetectionDataset& dataset,
                                        const std::vector<int>& novel_classes);

// Keeps only annotations of the listed classes (images without any survive
// with empty annotation lists removed).
DetectionDataset restrict_to_classes(const DetectionDataset& dataset,
                                     const std::vector<int>& keep_classes);

// On-disk layout: <dir>/images/*.pgm, <dir>/classes.txt, and one
// line-delimited annotation file per split:
//   <image path> [<class_id> <x1> <y1> <x2> <y2>]...
// with integer pixel coordinates.
void save_dataset(DetectionDataset& dataset, const std::string& dir,
                  const std::string& split_name, bool write_images = true);
DetectionDataset load_dataset(const std::string& annotation_file);

}  // namespace fsce

#endif  // FSCE_DATASET_HPP
