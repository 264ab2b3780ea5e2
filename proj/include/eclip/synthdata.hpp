// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-source product data with planted, locatable instances.
//
// Each category owns a unit "signature" direction; each product jitters it.
// A product image is a grid of background noise cells with the product's
// signature (plus noise) planted inside a box whose position and size are
// re-drawn for every source. Text is the category token followed by a few
// product-specific attribute tokens.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "eclip/encoders.hpp"
#include "eclip/rng.hpp"
#include "json.hpp"

namespace eclip {

/// Grid-cell rectangle, inclusive-exclusive: columns [x1, x2), rows [y1, y2).
struct Box {
  std::size_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  std::size_t width() const { return x2 - x1; }
  std::size_t height() const { return y2 - y1; }
  std::size_t area() const { return width() * height(); }
  bool contains(std::size_t x, std::size_t y) const { return x >= x1 && x < x2 && y >= y1 && y < y2; }
  bool operator==(const Box&) const = default;
};

struct GenConfig {
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t input_dim = 16;
  std::size_t num_categories = 20;
  std::size_t sources_per_product = 3;
  double noise = 0.3;             // per-component std of instance-cell noise
  double background_std = 0.25;   // per-component std of background cells
  double product_jitter = 0.5;    // norm of the per-product signature offset
  std::size_t box_min = 2;
  std::size_t box_max = 4;
  std::size_t vocab_size = 256;
  std::size_t min_attributes = 3;
  std::size_t max_attributes = 5;
  /// Seeds the category signatures; datasets sharing it share categories.
  std::uint64_t world_seed = 0x5eedULL;

  void validate() const;
  /// Token id of category c (token 0 is reserved for CLS).
  std::uint32_t category_token(std::size_t c) const { return static_cast<std::uint32_t>(1 + c); }
};

void to_json(nlohmann::json& j, const GenConfig& c);
/// Strict: unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, GenConfig& c);

struct ProductSpec {
  std::uint64_t product_id = 0;
  std::uint32_t category_id = 0;
  std::vector<double> signature;  // unit norm, input_dim
  std::vector<std::uint32_t> text;
};

struct GeneratedProduct {
  ProductSpec spec;
  std::vector<ImageSample> images;  // one per source
  std::vector<Box> boxes;           // ground-truth instance box per source
};

/// Unit signature direction shared by every product of category c.
std::vector<double> category_signature(const GenConfig& cfg, std::size_t category);

GeneratedProduct generate_product(Rng& rng, const GenConfig& cfg, std::uint64_t product_id, std::uint32_t category_id);

struct SourceRecord {
  std::string path;  // relative to the manifest directory
  SourceTag tag = SourceTag::detail_page;
  Box box;
};

struct ProductRecord {
  std::uint64_t product_id = 0;
  std::uint32_t category_id = 0;
  std::vector<std::uint32_t> text;
  std::vector<SourceRecord> sources;
};

/// Products with lazily loaded source images.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<ProductRecord> records, std::filesystem::path base_dir);
  /// Dataset whose images are already in memory (no files involved).
  static Dataset in_memory(const std::vector<GeneratedProduct>& products);

  std::size_t size() const { return records_.size(); }
  const ProductRecord& record(std::size_t i) const { return records_.at(i); }
  const std::vector<ProductRecord>& records() const { return records_; }
  std::size_t num_sources(std::size_t i) const { return records_.at(i).sources.size(); }

  const ImageSample& image(std::size_t product, std::size_t source) const;
  TextSample text(std::size_t product) const;
  const Box& box(std::size_t product, std::size_t source) const { return records_.at(product).sources.at(source).box; }
  std::size_t num_categories() const;

 private:
  std::vector<ProductRecord> records_;
  std::filesystem::path base_dir_;
  mutable std::map<std::pair<std::size_t, std::size_t>, ImageSample> cache_;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

/// Writes n products (categories round-robin) into out_dir and returns the
/// manifest records. Product ids start at `first_id`. On failure every file
/// written so far is removed.
std::vector<ProductRecord> generate_dataset(std::uint64_t seed, std::size_t n_products, const GenConfig& cfg,
                                            const std::filesystem::path& out_dir, std::uint64_t first_id = 0);

/// In-memory counterpart of generate_dataset with identical contents.
std::vector<GeneratedProduct> generate_products(std::uint64_t seed, std::size_t n_products, const GenConfig& cfg,
                                                std::uint64_t first_id = 0);

std::string manifest_line(const ProductRecord& r);
ProductRecord parse_manifest_line(const std::string& line);
void write_manifest(const std::filesystem::path& path, const std::vector<ProductRecord>& records);
/// Reads a JSON-lines manifest; a malformed line raises InputError naming its number.
Dataset load_manifest(const std::filesystem::path& path);

/// Writes an image as a rank-3 [grid_h, grid_w, input_dim] tensor file.
void save_image(const std::filesystem::path& path, const ImageSample& img);
ImageSample load_image(const std::filesystem::path& path, SourceTag tag = SourceTag::detail_page);

}  // namespace eclip
