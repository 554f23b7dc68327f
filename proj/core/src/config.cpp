#include "hcma/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hcma/rng.hpp"

namespace hcma {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
T parse_num(const std::string& s) {
  T v{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      size_t pos = 0;
      v = static_cast<T>(std::stod(s, &pos));
      if (pos != s.size()) throw config_error("bad number: " + s);
    } catch (const std::exception&) {
      throw config_error("bad number: " + s);
    }
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw config_error("bad integer: " + s);
  }
  return v;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = [] {
    std::vector<std::pair<std::string, Field>> v;
    auto num = [&v](const std::string& key, auto RunConfig::* member) {
      using M = std::remove_reference_t<decltype(std::declval<RunConfig>().*member)>;
      v.push_back({key,
                   {[member](const RunConfig& c) {
                      if constexpr (std::is_floating_point_v<M>)
                        return fmt_double(c.*member);
                      else
                        return std::to_string(c.*member);
                    },
                    [member](RunConfig& c, const std::string& s) {
                      c.*member = parse_num<M>(s);
                    }}});
    };
    num("seed", &RunConfig::seed);
    num("image_side", &RunConfig::image_side);
    num("train_scenes", &RunConfig::train_scenes);
    num("codec_scenes", &RunConfig::codec_scenes);
    num("holdout_scenes", &RunConfig::holdout_scenes);
    num("min_objects", &RunConfig::min_objects);
    num("max_objects", &RunConfig::max_objects);
    num("codec_epochs", &RunConfig::codec_epochs);
    num("towers_epochs", &RunConfig::towers_epochs);
    num("align_epochs", &RunConfig::align_epochs);
    num("diffusion_epochs", &RunConfig::diffusion_epochs);
    num("batch_size", &RunConfig::batch_size);
    num("lr", &RunConfig::lr);
    num("weight_decay", &RunConfig::weight_decay);
    num("lambda1", &RunConfig::lambda1);
    num("lambda2", &RunConfig::lambda2);
    num("eta", &RunConfig::eta);
    num("backtrack", &RunConfig::backtrack);
    v.push_back({"sampler_mode",
                 {[](const RunConfig& c) { return c.sampler_mode; },
                  [](RunConfig& c, const std::string& s) { c.sampler_mode = s; }}});
    num("sample_steps", &RunConfig::sample_steps);
    num("sample_count", &RunConfig::sample_count);
    num("diffusion_T", &RunConfig::diffusion_T);
    num("beta_start", &RunConfig::beta_start);
    num("beta_end", &RunConfig::beta_end);
    return v;
  }();
  return f;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::validate() const {
  if (image_side % 32 != 0 || image_side <= 0)
    throw config_error("image_side must be a positive multiple of 32");
  if (sampler_mode != "ddim" && sampler_mode != "literal")
    throw config_error("sampler_mode must be 'ddim' or 'literal'");
  if (sample_steps < 1 || sample_steps > diffusion_T)
    throw config_error("sample_steps must be in [1, diffusion_T]");
  if (diffusion_T < 2) throw config_error("diffusion_T must be >= 2");
  if (!(beta_start > 0.0) || !(beta_end > beta_start) || beta_end >= 1.0)
    throw config_error("betas must satisfy 0 < beta_start < beta_end < 1");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw config_error("lambdas must be >= 0");
  if (eta < 0.0) throw config_error("eta must be >= 0");
  if (min_objects < 1 || max_objects > 4 || max_objects < min_objects)
    throw config_error("object count range must satisfy 1 <= min <= max <= 4");
  if (batch_size < 1) throw config_error("batch_size must be >= 1");
  if (lr < 0.0) throw config_error("lr must be >= 0");
  for (int e : {codec_epochs, towers_epochs, align_epochs, diffusion_epochs})
    if (e < 1) throw config_error("epoch counts must be >= 1");
  for (int n : {train_scenes, codec_scenes, holdout_scenes, sample_count})
    if (n < 1) throw config_error("scene/sample counts must be >= 1");
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  for (auto& [key, field] : fields()) out << key << " = " << field.get(*this) << "\n";
  return out.str();
}

uint64_t RunConfig::digest() const { return fnv1a64(serialize()); }

uint64_t RunConfig::train_digest() const {
  std::ostringstream out;
  for (auto& [key, field] : fields()) {
    if (key == "sampler_mode" || key == "sample_steps" || key == "sample_count" ||
        key == "lambda1" || key == "lambda2" || key == "eta" || key == "backtrack")
      continue;
    out << key << " = " << field.get(*this) << "\n";
  }
  return fnv1a64(out.str());
}

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (auto& [k, field] : fields())
      if (k == key) {
        field.set(cfg, value);
        found = true;
        break;
      }
    if (!found)
      throw config_error("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

}  // namespace hcma
