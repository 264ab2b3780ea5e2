// SPDX-License-Identifier: Apache-2.0

#include "eclip/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "eclip/errors.hpp"
#include "eclip/tensor_io.hpp"

namespace eclip {

using nlohmann::json;

void GenConfig::validate() const {
  if (grid_h == 0 || grid_w == 0 || input_dim == 0) throw ConfigError("grid and input_dim must be positive");
  if (num_categories == 0) throw ConfigError("num_categories must be positive");
  if (sources_per_product == 0) throw ConfigError("sources_per_product must be positive");
  if (box_min == 0 || box_min > box_max || box_max > grid_h || box_max > grid_w) {
    throw ConfigError("box size range [" + std::to_string(box_min) + ", " + std::to_string(box_max) +
                      "] infeasible for a " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  if (noise < 0.0 || background_std < 0.0 || product_jitter < 0.0) throw ConfigError("noise levels must be >= 0");
  if (vocab_size <= 1 + num_categories) throw ConfigError("vocab_size must exceed 1 + num_categories");
  if (min_attributes > max_attributes) throw ConfigError("min_attributes > max_attributes");
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"grid_h", c.grid_h},
           {"grid_w", c.grid_w},
           {"input_dim", c.input_dim},
           {"num_categories", c.num_categories},
           {"sources_per_product", c.sources_per_product},
           {"noise", c.noise},
           {"background_std", c.background_std},
           {"product_jitter", c.product_jitter},
           {"box_min", c.box_min},
           {"box_max", c.box_max},
           {"vocab_size", c.vocab_size},
           {"min_attributes", c.min_attributes},
           {"max_attributes", c.max_attributes},
           {"world_seed", c.world_seed}};
}

void from_json(const json& j, GenConfig& c) {
  if (!j.is_object()) throw ConfigError("generator config must be an object");
  json defaults;
  to_json(defaults, c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("generator config: unknown key '" + it.key() + "'");
  }
  try {
    auto get = [&](const char* k, auto& out) {
      if (j.contains(k)) out = j.at(k).get<std::decay_t<decltype(out)>>();
    };
    get("grid_h", c.grid_h);
    get("grid_w", c.grid_w);
    get("input_dim", c.input_dim);
    get("num_categories", c.num_categories);
    get("sources_per_product", c.sources_per_product);
    get("noise", c.noise);
    get("background_std", c.background_std);
    get("product_jitter", c.product_jitter);
    get("box_min", c.box_min);
    get("box_max", c.box_max);
    get("vocab_size", c.vocab_size);
    get("min_attributes", c.min_attributes);
    get("max_attributes", c.max_attributes);
    get("world_seed", c.world_seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.validate();
}

namespace {

std::vector<double> unit_gaussian(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    s += x * x;
  }
  const double inv = 1.0 / std::sqrt(s);
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace

std::vector<double> category_signature(const GenConfig& cfg, std::size_t category) {
  Rng rng = Rng::derive(cfg.world_seed, {0x636174ULL, category});
  return unit_gaussian(rng, cfg.input_dim);
}

GeneratedProduct generate_product(Rng& rng, const GenConfig& cfg, std::uint64_t product_id, std::uint32_t category_id) {
  cfg.validate();
  if (category_id >= cfg.num_categories) throw InputError("category id out of range");
  const auto d = cfg.input_dim;
  GeneratedProduct out;
  out.spec.product_id = product_id;
  out.spec.category_id = category_id;

  auto sig = category_signature(cfg, category_id);
  const auto offset = unit_gaussian(rng, d);
  double norm = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    sig[k] += cfg.product_jitter * offset[k];
    norm += sig[k] * sig[k];
  }
  norm = std::sqrt(norm);
  for (auto& x : sig) x /= norm;
  out.spec.signature = sig;

  out.spec.text.push_back(cfg.category_token(category_id));
  const auto n_attr = cfg.min_attributes + rng.below(cfg.max_attributes - cfg.min_attributes + 1);
  const auto first_attr = 1 + cfg.num_categories;
  for (std::size_t a = 0; a < n_attr; ++a) {
    out.spec.text.push_back(static_cast<std::uint32_t>(first_attr + rng.below(cfg.vocab_size - first_attr)));
  }

  static constexpr SourceTag kTags[] = {SourceTag::detail_page, SourceTag::comment, SourceTag::video_frame};
  for (std::size_t s = 0; s < cfg.sources_per_product; ++s) {
    const auto span = cfg.box_max - cfg.box_min + 1;
    const auto bw = cfg.box_min + rng.below(span);
    const auto bh = cfg.box_min + rng.below(span);
    Box box;
    box.x1 = rng.below(cfg.grid_w - bw + 1);
    box.y1 = rng.below(cfg.grid_h - bh + 1);
    box.x2 = box.x1 + bw;
    box.y2 = box.y1 + bh;

    std::vector<double> cells(cfg.grid_h * cfg.grid_w * d);
    for (std::size_t y = 0; y < cfg.grid_h; ++y) {
      for (std::size_t x = 0; x < cfg.grid_w; ++x) {
        double* c = &cells[(y * cfg.grid_w + x) * d];
        const bool inside = box.contains(x, y);
        for (std::size_t k = 0; k < d; ++k) {
          const double z = rng.normal();
          c[k] = inside ? sig[k] + cfg.noise * z : cfg.background_std * z;
        }
      }
    }
    ImageSample img;
    img.grid_h = cfg.grid_h;
    img.grid_w = cfg.grid_w;
    img.patch_features = Tensor::from({cfg.grid_h * cfg.grid_w, d}, std::move(cells));
    img.source_tag = kTags[s % 3];
    out.images.push_back(std::move(img));
    out.boxes.push_back(box);
  }
  return out;
}

std::vector<GeneratedProduct> generate_products(std::uint64_t seed, std::size_t n_products, const GenConfig& cfg,
                                                std::uint64_t first_id) {
  cfg.validate();
  std::vector<GeneratedProduct> out;
  out.reserve(n_products);
  for (std::size_t k = 0; k < n_products; ++k) {
    Rng rng = Rng::derive(seed, {0x70726f64ULL, k});
    out.push_back(generate_product(rng, cfg, first_id + k, static_cast<std::uint32_t>(k % cfg.num_categories)));
  }
  return out;
}

// ---------------------------------------------------------------- files

void save_image(const std::filesystem::path& path, const ImageSample& img) {
  const auto d = img.patch_features.dim(1);
  save_tensor(path, Tensor::from({img.grid_h, img.grid_w, d}, img.patch_features.to_vector()));
}

ImageSample load_image(const std::filesystem::path& path, SourceTag tag) {
  const Tensor t = load_tensor(path);
  if (t.rank() != 3) throw InputError(path.string() + ": image tensors must be [grid_h, grid_w, input_dim]");
  ImageSample img;
  img.grid_h = t.dim(0);
  img.grid_w = t.dim(1);
  img.patch_features = Tensor::from({t.dim(0) * t.dim(1), t.dim(2)}, t.to_vector());
  img.source_tag = tag;
  return img;
}

std::string manifest_line(const ProductRecord& r) {
  json sources = json::array();
  for (const auto& s : r.sources) {
    sources.push_back({{"path", s.path}, {"tag", to_string(s.tag)}, {"box", {s.box.x1, s.box.y1, s.box.x2, s.box.y2}}});
  }
  json j{{"product_id", r.product_id}, {"category_id", r.category_id}, {"text", r.text}, {"sources", sources}};
  return j.dump();
}

ProductRecord parse_manifest_line(const std::string& line) {
  const json j = json::parse(line);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "product_id" && k != "category_id" && k != "text" && k != "sources") {
      throw InputError("unknown field '" + k + "'");
    }
  }
  ProductRecord r;
  r.product_id = j.at("product_id").get<std::uint64_t>();
  r.category_id = j.at("category_id").get<std::uint32_t>();
  r.text = j.at("text").get<std::vector<std::uint32_t>>();
  for (const auto& s : j.at("sources")) {
    SourceRecord src;
    src.path = s.at("path").get<std::string>();
    src.tag = parse_source_tag(s.at("tag").get<std::string>());
    const auto b = s.at("box").get<std::vector<std::size_t>>();
    if (b.size() != 4 || b[2] <= b[0] || b[3] <= b[1]) throw InputError("box must be [x1, y1, x2, y2] with x2>x1, y2>y1");
    src.box = {b[0], b[1], b[2], b[3]};
    r.sources.push_back(std::move(src));
  }
  if (r.sources.empty()) throw InputError("product has no sources");
  return r;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ProductRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& r : records) out << manifest_line(r) << '\n';
  if (!out) throw InputError("write failed for " + path.string());
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  std::vector<ProductRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(parse_manifest_line(line));
    } catch (const std::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": malformed manifest line: " + e.what());
    }
  }
  return Dataset(std::move(records), path.parent_path());
}

std::vector<ProductRecord> generate_dataset(std::uint64_t seed, std::size_t n_products, const GenConfig& cfg,
                                            const std::filesystem::path& out_dir, std::uint64_t first_id) {
  namespace fs = std::filesystem;
  cfg.validate();
  std::vector<fs::path> written;
  std::vector<ProductRecord> records;
  try {
    fs::create_directories(out_dir);
    for (std::size_t k = 0; k < n_products; ++k) {
      Rng rng = Rng::derive(seed, {0x70726f64ULL, k});
      auto p = generate_product(rng, cfg, first_id + k, static_cast<std::uint32_t>(k % cfg.num_categories));
      ProductRecord r;
      r.product_id = p.spec.product_id;
      r.category_id = p.spec.category_id;
      r.text = p.spec.text;
      for (std::size_t s = 0; s < p.images.size(); ++s) {
        const std::string name = "p" + std::to_string(r.product_id) + "_s" + std::to_string(s) + ".etns";
        save_image(out_dir / name, p.images[s]);
        written.push_back(out_dir / name);
        r.sources.push_back({name, p.images[s].source_tag, p.boxes[s]});
      }
      records.push_back(std::move(r));
    }
    written.push_back(out_dir / kManifestName);
    write_manifest(out_dir / kManifestName, records);
  } catch (...) {
    std::error_code ec;
    for (const auto& f : written) fs::remove(f, ec);
    throw;
  }
  return records;
}

// ---------------------------------------------------------------- Dataset

Dataset::Dataset(std::vector<ProductRecord> records, std::filesystem::path base_dir)
    : records_(std::move(records)), base_dir_(std::move(base_dir)) {}

Dataset Dataset::in_memory(const std::vector<GeneratedProduct>& products) {
  Dataset ds;
  for (std::size_t i = 0; i < products.size(); ++i) {
    const auto& p = products[i];
    ProductRecord r;
    r.product_id = p.spec.product_id;
    r.category_id = p.spec.category_id;
    r.text = p.spec.text;
    for (std::size_t s = 0; s < p.images.size(); ++s) {
      r.sources.push_back({"", p.images[s].source_tag, p.boxes[s]});
      ds.cache_[{i, s}] = p.images[s];
    }
    ds.records_.push_back(std::move(r));
  }
  return ds;
}

const ImageSample& Dataset::image(std::size_t product, std::size_t source) const {
  auto key = std::make_pair(product, source);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  const auto& src = records_.at(product).sources.at(source);
  auto img = load_image(base_dir_ / src.path, src.tag);
  return cache_.emplace(key, std::move(img)).first->second;
}

TextSample Dataset::text(std::size_t product) const { return {records_.at(product).text, 0}; }

std::size_t Dataset::num_categories() const {
  std::size_t c = 0;
  for (const auto& r : records_) c = std::max<std::size_t>(c, r.category_id + 1);
  return c;
}

}  // namespace eclip
