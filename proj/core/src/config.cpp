#include "catdiff/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <variant>

#include "catdiff/errors.hpp"

namespace catdiff {

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "config table assumes 64-bit size_t");
using Field = std::variant<std::size_t Config::*, double Config::*, std::string Config::*>;

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", &Config::seed},
      {"resolution", &Config::resolution},
      {"patch", &Config::patch},
      {"latent_patch", &Config::latent_patch},
      {"classes", &Config::classes},
      {"min_area", &Config::min_area},
      {"max_area", &Config::max_area},
      {"n_train", &Config::n_train},
      {"n_test", &Config::n_test},
      {"width", &Config::width},
      {"heads", &Config::heads},
      {"teacher_layers", &Config::teacher_layers},
      {"inpainter_layers", &Config::inpainter_layers},
      {"tau", &Config::tau},
      {"denoiser_width", &Config::denoiser_width},
      {"denoiser_heads", &Config::denoiser_heads},
      {"denoiser_blocks", &Config::denoiser_blocks},
      {"timesteps", &Config::timesteps},
      {"beta_start", &Config::beta_start},
      {"beta_end", &Config::beta_end},
      {"vprompt_source", &Config::vprompt_source},
      {"lr", &Config::lr},
      {"batch_size", &Config::batch_size},
      {"teacher_epochs", &Config::teacher_epochs},
      {"inpainter_epochs", &Config::inpainter_epochs},
      {"denoiser_epochs", &Config::denoiser_epochs},
      {"denoiser_pretrain_epochs", &Config::denoiser_pretrain_epochs},
      {"eval_scenes", &Config::eval_scenes},
      {"eval_mask", &Config::eval_mask},
      {"ablation_seeds", &Config::ablation_seeds},
      {"hist_bins", &Config::hist_bins},
      {"output_dir", &Config::output_dir},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

}  // namespace

void Config::validate() const {
  require(classes >= 1 && classes <= 8, "classes must be in [1, 8]");
  require(resolution >= 2, "resolution must be at least 2");
  require(patch >= 1 && resolution % patch == 0, "patch must divide resolution");
  require(latent_patch >= 1 && resolution % latent_patch == 0, "latent_patch must divide resolution");
  require(grid() % 2 == 0, "patch grid side (resolution/patch) must be even");
  require(min_area > 0.0 && min_area <= max_area && max_area <= 1.0, "need 0 < min_area <= max_area <= 1");
  require(n_train >= classes && n_test >= classes, "n_train and n_test must be at least classes");
  require(width >= 2 && heads >= 1 && width % heads == 0, "heads must divide width");
  require(denoiser_width >= 2 && denoiser_heads >= 1 && denoiser_width % denoiser_heads == 0,
          "denoiser_heads must divide denoiser_width");
  require(denoiser_width % 2 == 0, "denoiser_width must be even (sinusoidal timestep embedding)");
  require(teacher_layers >= 1 && inpainter_layers >= 1 && denoiser_blocks >= 1, "layer counts must be positive");
  require(timesteps >= 1, "timesteps must be at least 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "need 0 < beta_start <= beta_end < 1");
  require(tau > 0.0, "tau must be positive");
  require(lr > 0.0, "lr must be positive");
  require(batch_size >= 1, "batch_size must be positive");
  require(vprompt_source == "predicted" || vprompt_source == "ground_truth",
          "vprompt_source must be 'predicted' or 'ground_truth'");
  require(eval_mask == "seg" || eval_mask == "bbox", "eval_mask must be 'seg' or 'bbox'");
  require(eval_scenes >= 1, "eval_scenes must be positive");
  require(ablation_seeds >= 1, "ablation_seeds must be positive");
  require(hist_bins >= 1, "hist_bins must be positive");
}

std::string Config::serialize() const {
  std::ostringstream os;
  for (const auto& [key, field] : fields()) {
    os << key << " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, double>)
            os << format_double(this->*member);
          else
            os << this->*member;
        },
        field);
    os << '\n';
  }
  return os.str();
}

Config Config::parse(const std::string& text) {
  Config cfg;
  std::map<std::string, Field> lookup(fields().begin(), fields().end());
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = lookup.find(key);
    if (it == lookup.end()) throw ConfigError("unknown config key '" + key + "'");
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<T, std::string>)
            cfg.*member = value;
          else
            cfg.*member = parse_number<T>(key, value);
        },
        it->second);
  }
  cfg.validate();
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config '" + path.string() + "'");
  out << serialize();
}

std::string Config::teacher_signature() const {
  std::ostringstream os;
  os << "teacher:R=" << resolution << ",patch=" << patch << ",K=" << classes << ",d=" << width << ",heads=" << heads
     << ",layers=" << teacher_layers;
  return os.str();
}

std::string Config::inpainter_signature() const {
  std::ostringstream os;
  os << teacher_signature() << "|inpainter:layers=" << inpainter_layers;
  return os.str();
}

std::string Config::denoiser_signature(const std::string& variant) const {
  std::ostringstream os;
  os << "denoiser:R=" << resolution << ",pz=" << latent_patch << ",N=" << num_patches() << ",d=" << width
     << ",K=" << classes << ",dh=" << denoiser_width << ",heads=" << denoiser_heads << ",blocks=" << denoiser_blocks
     << ",T=" << timesteps << ",beta=" << format_double(beta_start) << ":" << format_double(beta_end)
     << ",variant=" << variant;
  return os.str();
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace catdiff
