#include "catdiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <thread>

#include "catdiff/adam.hpp"
#include "catdiff/errors.hpp"
#include "catdiff/metrics.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/rng.hpp"
#include "catdiff/serialize.hpp"
#include "catdiff/tape.hpp"

namespace catdiff {

Tensor visual_prompt(Variant variant, const TeacherEncoder* teacher, const SemanticInpainter* inpainter,
                     const Scene& scene, MaskKind kind, std::size_t patch, bool ground_truth) {
  if (variant == Variant::baseline) return {};
  if (!teacher) throw ContractError("the " + to_string(variant) + " variant needs the teacher encoder");
  const Tensor& mask = scene_mask(scene, kind);
  const Tensor v_hat = teacher->encode_image_patches(apply_mask(scene.image, mask));
  const Tensor grid = mask_to_patch_grid(mask, patch);
  if (variant == Variant::context_only) return blend_and_downsample(v_hat, v_hat, grid).features;
  if (ground_truth) return blend_and_downsample(v_hat, teacher->encode_image_patches(scene.image), grid).features;
  if (!inpainter) throw ContractError("the full variant needs a semantic inpainter");
  const Tensor v_bar = inpainter->inpaint_features(FeatureGrid{v_hat, teacher->encode_text(scene.class_id), grid});
  return blend_and_downsample(v_hat, v_bar, grid).features;
}

DiffusionExample make_example(const Scene& scene, MaskKind kind, Variant variant, const TeacherEncoder* teacher,
                              const SemanticInpainter* inpainter, const Config& config, bool ground_truth) {
  const LatentCodec codec(config.latent_patch);
  DiffusionExample ex;
  ex.z0 = image_to_diffusion(codec, scene.image);
  ex.latent_mask = mask_to_latent(scene_mask(scene, kind), config.latent_patch);
  ex.masked_latent = mask_latent(ex.z0, ex.latent_mask);
  ex.class_id = scene.class_id;
  ex.vprompt = visual_prompt(variant, teacher, inpainter, scene, kind, config.patch, ground_truth);
  return ex;
}

Denoiser train_denoiser(const Corpus& corpus, const TeacherEncoder* teacher, const SemanticInpainter* inpainter,
                        const Config& config, Variant variant, std::uint64_t init_seed, DenoiserTrainReport* report,
                        const TrainHooks& hooks, const Denoiser* warm_start) {
  if (teacher && !teacher->frozen()) throw ContractError("train_denoiser: teacher must be frozen");
  if (inpainter && !inpainter->frozen()) throw ContractError("train_denoiser: inpainter must be frozen");
  if (corpus.scenes.empty()) throw ContractError("train_denoiser: empty corpus");
  const bool ground_truth = config.vprompt_source == "ground_truth";

  // ṽ depends only on frozen models, so it is computed once per scene and mask kind.
  struct Cached {
    DiffusionExample seg, bbox;
  };
  std::vector<Cached> cache;
  cache.reserve(corpus.scenes.size());
  for (const auto& s : corpus.scenes)
    cache.push_back({make_example(s, MaskKind::seg, variant, teacher, inpainter, config, ground_truth),
                     make_example(s, MaskKind::bbox, variant, teacher, inpainter, config, ground_truth)});

  Denoiser denoiser(DenoiserConfig::from(config, variant), init_seed);
  if (warm_start) {
    std::map<std::string, Tensor> source;
    for (const auto& [name, t] : warm_start->parameters()) source.emplace(name, t);
    for (const auto& [name, t] : denoiser.parameters()) {
      const auto it = source.find(name);
      if (it == source.end()) continue;
      if (it->second.shape() != t.shape())
        throw ConfigError("warm start: parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                          ", expected " + shape_str(t.shape()));
      Tensor dst = t;  // shares storage with the parameter
      std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
    }
  }
  const NoiseSchedule schedule = make_schedule(config.timesteps, config.beta_start, config.beta_end);
  Adam adam(denoiser.parameters(), AdamConfig{static_cast<float>(config.lr)});
  Rng rng(derive_seed(init_seed, 0x7A1));
  const EpsPredictor predictor = [&denoiser](const DiffusionExample& ex, const Tensor& z_t, std::size_t t) {
    return denoiser.forward(z_t, ex.masked_latent, ex.latent_mask, t, ex.class_id, ex.vprompt);
  };

  DenoiserTrainReport local;
  DenoiserTrainReport& rep = report ? *report : local;
  std::vector<std::size_t> order(cache.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  NamedTensors last_good;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.denoiser_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<DiffusionExample> batch;
      for (std::size_t b = start; b < end; ++b) batch.push_back(rng.coin() ? cache[order[b]].seg : cache[order[b]].bbox);
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = ldm_loss(batch, predictor, schedule, rng);
      }
      if (!std::isfinite(loss.item())) {
        if (hooks.on_divergence && !last_good.empty()) hooks.on_divergence(last_good);
        throw NumericError("denoiser training produced a non-finite loss at step " + std::to_string(step));
      }
      tape.backward(loss);
      if (hooks.on_divergence) {
        last_good.clear();
        for (const auto& [name, t] : denoiser.parameters()) last_good.emplace_back(name, t.clone());
      }
      adam.step();
      rep.step_losses.push_back(loss.item());
      if (hooks.on_loss) hooks.on_loss(step, loss.item());
      epoch_total += loss.item();
      ++epoch_steps;
      ++step;
    }
    rep.epoch_mean_losses.push_back(static_cast<float>(epoch_total / static_cast<double>(epoch_steps)));
  }
  denoiser.freeze();
  return denoiser;
}

InpaintResult sample_inpaint(const Scene& scene, std::size_t class_id, MaskKind kind, const TeacherEncoder* teacher,
                             const SemanticInpainter* inpainter, const Denoiser& denoiser,
                             const NoiseSchedule& schedule, const Config& config, Rng& noise) {
  if (schedule.steps() != denoiser.config().timesteps)
    throw ConfigError("sampler: schedule has " + std::to_string(schedule.steps()) + " steps but the denoiser expects " +
                      std::to_string(denoiser.config().timesteps));
  if (class_id >= config.classes) throw ContractError("sampler: class id " + std::to_string(class_id) + " out of range");
  const bool ground_truth = config.vprompt_source == "ground_truth";
  Scene prompted = scene;
  prompted.class_id = static_cast<std::uint32_t>(class_id);
  const DiffusionExample ex =
      make_example(prompted, kind, denoiser.config().variant, teacher, inpainter, config, ground_truth);

  Tensor z = Tensor::randn(ex.z0.shape(), noise);
  for (std::size_t t = schedule.steps(); t >= 1; --t) {
    const Tensor eps = denoiser.forward(z, ex.masked_latent, ex.latent_mask, t, class_id, ex.vprompt);
    const Tensor fresh = t > 1 ? Tensor::randn(z.shape(), noise) : Tensor();
    z = ddpm_step(z, t, eps, schedule, fresh);
  }

  InpaintResult out;
  out.mask = scene_mask(scene, kind).clone();
  out.decoded = diffusion_to_image(LatentCodec(config.latent_patch), z);
  out.image = scene.image.clone();
  const std::size_t plane = out.mask.numel();
  for (std::size_t i = 0; i < out.image.numel(); ++i)
    if (out.mask[i % plane] != 0.0f) out.image[i] = out.decoded[i];
  return out;
}

VariantMetrics evaluate_variant(const Corpus& test, const TeacherEncoder& teacher, const SemanticInpainter* inpainter,
                                const Denoiser& denoiser, const Config& config, std::uint64_t eval_seed,
                                std::size_t threads) {
  const std::size_t n = std::min(config.eval_scenes, test.scenes.size());
  if (n == 0) throw ContractError("evaluation needs a nonempty test set");
  const MaskKind kind = parse_mask_kind(config.eval_mask);
  const NoiseSchedule schedule = make_schedule(config.timesteps, config.beta_start, config.beta_end);

  std::vector<InpaintResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < n; i += stride) {
      try {
        Rng noise(derive_seed(eval_seed, i));
        const Scene& s = test.scenes[i];
        results[i] = sample_inpaint(s, s.class_id, kind, &teacher, inpainter, denoiser, schedule, config, noise);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, n);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<Tensor> real, fake, masks;
  VariantMetrics m;
  m.variant = to_string(denoiser.config().variant);
  double align = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Scene& s = test.scenes[i];
    real.push_back(s.image);
    fake.push_back(results[i].image);
    masks.push_back(results[i].mask);
    align += region_alignment(teacher, results[i].image, results[i].mask, s.class_id);
    m.bg_error = std::max<double>(m.bg_error, background_preservation(s.image, results[i].image, results[i].mask));
  }
  m.alignment = align / static_cast<double>(n);
  m.fid_proxy = fid_proxy(real, fake, teacher).value;
  const FidResult local = local_fid_proxy(real, fake, masks, teacher);
  m.local_fid_proxy = local.value;
  m.local_unstable = local.unstable;
  return m;
}

AblationTable run_ablation(const Corpus& train, const Corpus& test, const TeacherEncoder& teacher,
                           const SemanticInpainter& inpainter, const Config& config, std::size_t threads,
                           const AblationHooks& hooks) {
  constexpr Variant kVariants[] = {Variant::baseline, Variant::context_only, Variant::full};
  AblationTable table;
  for (std::size_t s = 0; s < config.ablation_seeds; ++s) {
    const std::uint64_t init_seed = derive_seed(config.seed, 3, s);
    const std::uint64_t eval_seed = derive_seed(config.seed, 4, s);
    std::optional<Denoiser> trunk;
    std::string trunk_error;
    if (config.denoiser_pretrain_epochs > 0) {
      Config pre = config;
      pre.denoiser_epochs = config.denoiser_pretrain_epochs;
      try {
        trunk.emplace(train_denoiser(train, nullptr, nullptr, pre, Variant::baseline, derive_seed(config.seed, 5, s)));
      } catch (const std::exception& e) {
        trunk_error = std::string("trunk: ") + e.what();
      }
    }
    for (Variant v : kVariants) {
      VariantMetrics row;
      try {
        if (!trunk_error.empty()) throw std::runtime_error(trunk_error);
        DenoiserTrainReport rep;
        const Denoiser den = train_denoiser(train, &teacher, &inpainter, config, v, init_seed, &rep, {},
                                            trunk ? &*trunk : nullptr);
        if (hooks.on_trained) hooks.on_trained(v, s, den, rep);
        row = evaluate_variant(test, teacher, &inpainter, den, config, eval_seed, threads);
      } catch (const std::exception& e) {
        row = VariantMetrics{};
        row.variant = to_string(v);
        row.failed = true;
        row.failure = e.what();
      }
      row.seed = s;
      if (hooks.log) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "seed %zu %-12s local_fid %.4f fid %.4f align %.4f bg %.1g%s", s,
                      row.variant.c_str(), row.local_fid_proxy, row.fid_proxy, row.alignment, row.bg_error,
                      row.failed ? " FAILED" : "");
        hooks.log(row.failed ? std::string(buf) + ": " + row.failure : std::string(buf));
      }
      table.rows.push_back(row);
    }
  }
  table.means = variant_means(table.rows);
  return table;
}

std::vector<VariantMetrics> variant_means(const std::vector<VariantMetrics>& rows) {
  std::vector<VariantMetrics> means;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    auto it = std::find_if(means.begin(), means.end(), [&](const VariantMetrics& m) { return m.variant == r.variant; });
    if (it == means.end()) {
      VariantMetrics m;
      m.variant = r.variant;
      m.failed = true;
      means.push_back(m);
      counts.push_back(0);
      it = means.end() - 1;
    }
    if (r.failed) continue;
    const auto k = static_cast<std::size_t>(it - means.begin());
    it->failed = false;
    it->fid_proxy += r.fid_proxy;
    it->local_fid_proxy += r.local_fid_proxy;
    it->alignment += r.alignment;
    it->bg_error = std::max(it->bg_error, r.bg_error);
    it->local_unstable = it->local_unstable || r.local_unstable;
    ++counts[k];
  }
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (counts[k] == 0) continue;
    const double c = static_cast<double>(counts[k]);
    means[k].fid_proxy /= c;
    means[k].local_fid_proxy /= c;
    means[k].alignment /= c;
  }
  return means;
}

std::string histogram_tsv(const CosineGainReport& g) {
  std::string out = "bin_lo\tbin_hi\tbefore\tafter\n";
  const std::size_t bins = g.hist_before.counts.size();
  const double width = (g.hist_before.hi - g.hist_before.lo) / static_cast<double>(bins);
  char buf[128];
  for (std::size_t b = 0; b < bins; ++b) {
    std::snprintf(buf, sizeof buf, "%.4f\t%.4f\t%zu\t%zu\n", g.hist_before.lo + width * static_cast<double>(b),
                  g.hist_before.lo + width * static_cast<double>(b + 1), g.hist_before.counts[b], g.hist_after.counts[b]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "# mean_before %.6f mean_after %.6f gain %.6f patches %zu\n",
                static_cast<double>(g.mean_before), static_cast<double>(g.mean_after),
                static_cast<double>(g.mean_after - g.mean_before), g.before.size());
  out += buf;
  return out;
}

std::string results_tsv(const std::vector<VariantMetrics>& rows, const std::vector<VariantMetrics>& means) {
  std::string out = "variant\tseed\tfid_proxy\tlocal_fid_proxy\talignment\tbg_error\n";
  auto line = [&out](const VariantMetrics& r, const std::string& seed) {
    char buf[256];
    if (r.failed)
      std::snprintf(buf, sizeof buf, "%s\t%s\tfailed\tfailed\tfailed\tfailed\n", r.variant.c_str(), seed.c_str());
    else
      std::snprintf(buf, sizeof buf, "%s\t%s\t%.6f\t%.6f\t%.6f\t%.6f\n", r.variant.c_str(), seed.c_str(), r.fid_proxy,
                    r.local_fid_proxy, r.alignment, r.bg_error);
    out += buf;
  };
  for (const auto& r : rows) line(r, std::to_string(r.seed));
  for (const auto& m : means) line(m, "mean");
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ContractError("write_ppm: expected [3×H×W]");
  const std::size_t H = image.dim(1), W = image.dim(2);
  std::string bytes = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(image[(c * H + y) * W + x], 0.0f, 1.0f);
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
  std::ofstream f(path, std::ios::binary);
  if (!f || !f.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw IoError("cannot write " + path.string());
}

void write_npy(const std::filesystem::path& path, const Tensor& tensor) {
  std::string shape;
  for (std::size_t d : tensor.shape()) shape += (shape.empty() ? "" : ", ") + std::to_string(d);
  if (tensor.rank() == 1) shape += ",";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + shape + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::string bytes = "\x93NUMPY";
  bytes.push_back(1);
  bytes.push_back(0);
  bytes.push_back(static_cast<char>(header.size() & 0xFF));
  bytes.push_back(static_cast<char>(header.size() >> 8));
  bytes += header;
  const std::size_t payload = tensor.numel() * sizeof(float);
  const std::size_t offset = bytes.size();
  bytes.resize(offset + payload);
  std::memcpy(bytes.data() + offset, tensor.ptr(), payload);
  std::ofstream f(path, std::ios::binary);
  if (!f || !f.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw IoError("cannot write " + path.string());
}

Tensor read_npy(const std::filesystem::path& path) {
  const std::vector<char> raw = read_file_bytes(path);
  if (raw.size() < 10 || std::memcmp(raw.data(), "\x93NUMPY", 6) != 0) throw IoError(path.string() + ": not an .npy file");
  const std::size_t hlen = static_cast<unsigned char>(raw[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(raw[9])) << 8);
  if (raw.size() < 10 + hlen) throw IoError(path.string() + ": truncated header");
  const std::string header(raw.data() + 10, hlen);
  if (header.find("'<f4'") == std::string::npos || header.find("False") == std::string::npos)
    throw IoError(path.string() + ": only little-endian C-order float32 is supported");
  const auto open = header.find('('), close = header.find(')');
  Shape shape;
  std::string dims = header.substr(open + 1, close - open - 1);
  for (std::size_t pos = 0; pos < dims.size();) {
    const std::size_t comma = dims.find(',', pos);
    const std::string tok = dims.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (tok.find_first_not_of(' ') != std::string::npos) shape.push_back(std::stoul(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  Tensor t(shape);
  if (raw.size() != 10 + hlen + t.numel() * sizeof(float)) throw IoError(path.string() + ": payload size mismatch");
  std::memcpy(t.ptr(), raw.data() + 10 + hlen, t.numel() * sizeof(float));
  return t;
}

std::size_t env_threads() {
  const char* v = std::getenv("CATDIFF_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0' || n == 0) throw ConfigError("CATDIFF_THREADS must be a positive integer, got '" + std::string(v) + "'");
  return n;
}

}  // namespace catdiff
