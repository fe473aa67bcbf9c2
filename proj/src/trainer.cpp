#include "crfp/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>

namespace fs = std::filesystem;

namespace crfp {

namespace {

constexpr float kBeta1 = 0.9f;
constexpr float kBeta2 = 0.999f;
constexpr float kAdamEps = 1e-8f;

std::vector<std::string> flow_names(const ParamStore& store) {
  std::vector<std::string> out;
  for (const auto& n : store.names())
    if (n.rfind("flow.", 0) == 0) out.push_back(n);
  return out;
}

// Ground-truth fovea crops are what the sensor would deliver: the HR frame
// restricted to the realized box.
Tensor fovea_crop(const Tensor& hr, const FovBox& box) {
  return crop_spatial(hr, box.y0, box.x0, box.side, box.side);
}

struct SynthMotion {
  Tensor prev, cur, flow, mask2;  // mask2: (1,2,h,w), 1 where the true flow is observable
};

// Warps a real LR frame by a small known field (pure translation or a <= 2
// degree rotation about the frame center). The warp samples prev at p + G(p),
// so G itself is the backward flow the estimator should recover; positions
// whose source falls outside the frame are masked out of the loss.
SynthMotion make_synth_motion(const Tensor& prev, Rng& rng) {
  int h = prev.dim(2), w = prev.dim(3);
  Tensor g = zeros({1, 2, h, w});
  float* gp = g.ptr();
  long plane = static_cast<long>(h) * w;
  if (rng.uniform_int(0, 1) == 0) {
    float dmax = std::min(4.0f, static_cast<float>(std::min(h, w)) / 4.0f);
    float dx = rng.uniform_range(-dmax, dmax), dy = rng.uniform_range(-dmax, dmax);
    for (long p = 0; p < plane; ++p) {
      gp[p] = dx;
      gp[plane + p] = dy;
    }
  } else {
    double th = rng.uniform_range(-1.0f, 1.0f) * (2.0 * 3.14159265358979323846 / 180.0);
    double cx = (w - 1) * 0.5, cy = (h - 1) * 0.5;
    double c = std::cos(th) - 1.0, s = std::sin(th);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double ux = x - cx, uy = y - cy;
        gp[static_cast<long>(y) * w + x] = static_cast<float>(c * ux - s * uy);
        gp[plane + static_cast<long>(y) * w + x] = static_cast<float>(s * ux + c * uy);
      }
  }

  SynthMotion sm;
  sm.prev = prev;
  sm.cur = warp_bilinear(prev, g);
  sm.flow = g;
  sm.mask2 = zeros({1, 2, h, w});
  float* mp = sm.mask2.ptr();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      long p = static_cast<long>(y) * w + x;
      double sx = x + gp[p], sy = y + gp[plane + p];
      if (sx >= 0.0 && sx <= w - 1 && sy >= 0.0 && sy <= h - 1) mp[p] = mp[plane + p] = 1.0f;
    }
  return sm;
}

void append_adam_records(std::vector<CkptRecord>& recs, const AdamState& st,
                         const ParamStore& store) {
  for (const auto& name : store.names()) {
    auto mi = st.m.find(name), vi = st.v.find(name);
    if (mi == st.m.end() || vi == st.v.end()) continue;
    const Tensor& p = store.at(name);
    recs.push_back({"adam.m." + name, p.shape, mi->second});
    recs.push_back({"adam.v." + name, p.shape, vi->second});
  }
  recs.push_back({"trainer.adam_t", {1}, {static_cast<float>(st.t)}});
  recs.push_back({"trainer.pretrain_done", {1}, {st.pretrain_done ? 1.0f : 0.0f}});
}

void save_train_checkpoint(const std::string& path, const RunConfig& cfg, CrfpModel& model,
                           const AdamState& st, long completed_iters) {
  std::vector<CkptRecord> recs = model.export_records();
  append_adam_records(recs, st, model.params());
  recs.push_back({"trainer.step", {1}, {static_cast<float>(completed_iters)}});
  save_checkpoint(path, serialize_config(cfg), recs);
}

GazeTrace make_eval_trace(const RunConfig& cfg, const FrameSequence& seq, int clip_idx) {
  int side = cfg.crfp.fovea_size;
  int n = static_cast<int>(seq.hr.size());
  if (cfg.trace_kind == "raster") return raster_trajectory(seq.width, seq.height, side, n);
  if (cfg.trace_kind == "horizontal") {
    int cy = cfg.trace_cy < 0 ? seq.height / 2 : cfg.trace_cy;
    return horizontal_trajectory(seq.width, seq.height, side, n, cy);
  }
  return tracker_trajectory(seq.width, seq.height, side, n, seq.width / 2, seq.height / 2,
                            cfg.trace_sigma, mix_seed(cfg.train.seed, 7700 + clip_idx));
}

}  // namespace

void adam_step(ParamStore& store, const std::vector<std::string>& names, AdamState& st,
               float lr_model, float lr_flow, float clip_norm) {
  double sq = 0.0;
  std::vector<const std::vector<float>*> grads(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    const Tensor& p = store.at(names[i]);
    const std::vector<float>* g = grad_of(p);
    if (!g) throw UsageError("adam_step: no gradient for parameter " + names[i]);
    grads[i] = g;
    for (float v : *g) sq += static_cast<double>(v) * v;
  }
  double norm = std::sqrt(sq);
  float scale = (clip_norm > 0.0f && norm > clip_norm)
                    ? static_cast<float>(clip_norm / norm)
                    : 1.0f;

  ++st.t;
  double c1 = 1.0 - std::pow(static_cast<double>(kBeta1), static_cast<double>(st.t));
  double c2 = 1.0 - std::pow(static_cast<double>(kBeta2), static_cast<double>(st.t));
  for (size_t i = 0; i < names.size(); ++i) {
    Tensor& p = store.at(names[i]);
    float lr = names[i].rfind("flow.", 0) == 0 ? lr_flow : lr_model;
    auto& m = st.m[names[i]];
    auto& v = st.v[names[i]];
    size_t n = static_cast<size_t>(p.numel());
    if (m.empty()) m.assign(n, 0.0f);
    if (v.empty()) v.assign(n, 0.0f);
    float* pp = p.ptr();
    const float* gp = grads[i]->data();
    for (size_t j = 0; j < n; ++j) {
      float g = gp[j] * scale;
      m[j] = kBeta1 * m[j] + (1.0f - kBeta1) * g;
      v[j] = kBeta2 * v[j] + (1.0f - kBeta2) * g * g;
      double mh = m[j] / c1, vh = v[j] / c2;
      pp[j] -= static_cast<float>(lr * mh / (std::sqrt(vh) + kAdamEps));
    }
  }
}

std::vector<FrameSequence> load_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw DataError("not a directory: " + root);
  std::vector<std::string> subdirs;
  for (const auto& e : fs::directory_iterator(root)) {
    std::string name = e.path().filename().string();
    if (!name.empty() && name[0] == '.') continue;
    if (e.is_directory()) subdirs.push_back(e.path().string());
  }
  std::sort(subdirs.begin(), subdirs.end());

  std::vector<FrameSequence> out;
  if (subdirs.empty()) {
    out.push_back(load_sequence(root));
  } else {
    for (const auto& d : subdirs) out.push_back(load_sequence(d));
  }
  for (auto& seq : out) degrade_sequence(seq);
  return out;
}

std::string train_loop(const RunConfig& cfg, const std::string& resume_path) {
  cfg.validate();
  if (cfg.train_dir.empty()) throw ConfigError("data.train_dir is not set");
  if (cfg.output_dir.empty()) throw ConfigError("output.dir is not set");
  std::vector<FrameSequence> data = load_dataset(cfg.train_dir);
  for (const auto& seq : data)
    if (static_cast<int>(seq.hr.size()) < cfg.train.unroll)
      throw ConfigError("clip " + seq.clip_id + " is shorter than the unroll window");

  fs::create_directories(cfg.output_dir);
  {
    std::ofstream f(fs::path(cfg.output_dir) / "config.resolved", std::ios::trunc);
    f << serialize_config(cfg);
  }

  CrfpModel model(cfg.crfp, cfg.train.seed);
  ParamStore& store = model.params();
  AdamState st;
  long start_iter = 0;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    model.import_records(ck);
    for (const auto& name : store.names()) {
      const CkptRecord* m = ck.find("adam.m." + name);
      const CkptRecord* v = ck.find("adam.v." + name);
      if (m) st.m[name] = m->data;
      if (v) st.v[name] = v->data;
    }
    st.t = static_cast<long>(ck.require("trainer.adam_t").data.at(0));
    st.pretrain_done = ck.require("trainer.pretrain_done").data.at(0) != 0.0f;
    start_iter = static_cast<long>(ck.require("trainer.step").data.at(0));
  }

  // Flow warmup: the aggregators are useless while flow is noise, so the
  // estimator first learns small known motions on real LR content. Model
  // parameters stay frozen here (the loss never reaches them).
  if (!st.pretrain_done) {
    const float warmup_lr = 1e-3f;
    std::vector<std::string> fnames = flow_names(store);
    for (int k = 0; k < cfg.train.flow_pretrain; ++k) {
      Rng rng(mix_seed(cfg.train.seed, (1ull << 20) + static_cast<uint64_t>(k)));
      const FrameSequence& seq = data[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(data.size()) - 1))];
      const Tensor& prev =
          seq.lr[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(seq.lr.size()) - 1))];
      SynthMotion sm = make_synth_motion(prev, rng);

      Tape tape;
      store.attach_all(tape);
      Tensor pred = flow_forward_padded(cfg.crfp.flow, store, sm.cur, sm.prev);
      Tensor loss = charbonnier_loss(mul(pred, sm.mask2), mul(sm.flow, sm.mask2),
                                     cfg.crfp.charbonnier_eps);
      if (!std::isfinite(loss.ptr()[0]))
        throw Error("non-finite flow warmup loss at step " + std::to_string(k));
      tape.backward(loss);
      adam_step(store, fnames, st, warmup_lr, warmup_lr);
      store.detach_all();
    }
    st.pretrain_done = true;
  }

  std::ofstream losslog(fs::path(cfg.output_dir) / "loss.csv",
                        start_iter > 0 ? std::ios::app : std::ios::trunc);
  if (start_iter == 0) losslog << "iteration,loss\n";

  for (long it = start_iter; it < cfg.train.iterations; ++it) {
    Rng rng(mix_seed(cfg.train.seed, static_cast<uint64_t>(it)));
    Tape tape;
    store.attach_all(tape);

    Tensor loss_sum;
    for (int b = 0; b < cfg.train.batch; ++b) {
      const FrameSequence& seq = data[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(data.size()) - 1))];
      int nframes = static_cast<int>(seq.hr.size());
      int t0 = rng.uniform_int(0, nframes - cfg.train.unroll);

      std::vector<Tensor> lr, hr;
      std::vector<FovBox> boxes;
      if (cfg.train.patch > 0) {
        TrainingSample s = sample_training_patch(seq, t0, cfg.train.unroll, cfg.train.patch,
                                                 cfg.crfp.fovea_size, rng);
        lr = std::move(s.lr);
        hr = std::move(s.hr);
        boxes = std::move(s.fovea);
      } else {
        int cy = cfg.trace_cy < 0 ? seq.height / 2 : cfg.trace_cy;
        GazeTrace tr =
            horizontal_trajectory(seq.width, seq.height, cfg.crfp.fovea_size, nframes, cy);
        for (int t = t0; t < t0 + cfg.train.unroll; ++t) {
          lr.push_back(seq.lr[static_cast<size_t>(t)]);
          hr.push_back(seq.hr[static_cast<size_t>(t)]);
          boxes.push_back(tr.boxes[static_cast<size_t>(t)]);
        }
      }

      RecurrentState state = model.reset_state(lr[0]);
      for (int u = 0; u < cfg.train.unroll; ++u) {
        auto [x_hat, next] =
            model.step(state, lr[static_cast<size_t>(u)],
                       fovea_crop(hr[static_cast<size_t>(u)], boxes[static_cast<size_t>(u)]),
                       boxes[static_cast<size_t>(u)]);
        state = std::move(next);
        Tensor l =
            charbonnier_loss(x_hat, hr[static_cast<size_t>(u)], cfg.crfp.charbonnier_eps);
        loss_sum = loss_sum.defined() ? add(loss_sum, l) : l;
      }
    }
    Tensor loss = mul_scalar(loss_sum, 1.0f / (cfg.train.batch * cfg.train.unroll));
    float lv = loss.ptr()[0];
    if (!std::isfinite(lv)) throw Error("non-finite loss at iteration " + std::to_string(it));
    tape.backward(loss);
    adam_step(store, store.names(), st, cfg.train.lr_model, cfg.train.lr_flow);
    store.detach_all();

    losslog << (it + 1) << ',' << lv << '\n';
    losslog.flush();
    if ((it + 1) % 100 == 0 || it + 1 == cfg.train.iterations)
      std::printf("iter %ld/%d loss %.6f\n", it + 1, cfg.train.iterations, lv);

    if ((it + 1) % cfg.train.checkpoint_every == 0 && it + 1 < cfg.train.iterations) {
      std::string p =
          (fs::path(cfg.output_dir) / ("ckpt-" + std::to_string(it + 1) + ".crfp")).string();
      save_train_checkpoint(p, cfg, model, st, it + 1);
    }
  }

  std::string final_path = (fs::path(cfg.output_dir) / "model.crfp").string();
  save_train_checkpoint(final_path, cfg, model, st,
                        std::max(start_iter, static_cast<long>(cfg.train.iterations)));
  return final_path;
}

EvalClipResult eval_clip(CrfpModel* model, const FrameSequence& seq, const GazeTrace& trace) {
  if (seq.lr.size() != seq.hr.size())
    throw UsageError("eval_clip: sequence has no derived LR frames");
  if (trace.boxes.size() < seq.hr.size())
    throw UsageError("eval_clip: trace shorter than the clip");

  EvalClipResult res;
  res.clip_id = seq.clip_id;
  res.trace = trace;
  if (model) {
    model->params().detach_all();
    RecurrentState state = model->reset_state(seq.lr[0]);
    for (size_t t = 0; t < seq.hr.size(); ++t) {
      const FovBox& box = trace.boxes[t];
      auto [x_hat, next] = model->step(state, seq.lr[t], fovea_crop(seq.hr[t], box), box);
      state = std::move(next);
      res.outputs.push_back(clamp01(x_hat));
    }
  } else {
    for (const Tensor& lr : seq.lr) res.outputs.push_back(clamp01(bicubic_resize(lr, 8.0)));
  }
  res.report = evaluate_clip(seq.clip_id, res.outputs, seq.hr, trace);
  return res;
}

std::vector<EvalClipResult> run_eval(const RunConfig& cfg, CrfpModel* model, int jobs) {
  cfg.validate();
  if (cfg.eval_dir.empty()) throw ConfigError("data.eval_dir is not set");
  std::vector<FrameSequence> data = load_dataset(cfg.eval_dir);
  if (model) model->params().detach_all();

  std::vector<EvalClipResult> results(data.size());
  std::vector<std::exception_ptr> errs(data.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= data.size()) return;
      try {
        results[i] = eval_clip(model, data[i], make_eval_trace(cfg, data[i], static_cast<int>(i)));
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };

  int n = std::clamp(jobs, 1, static_cast<int>(data.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errs)
    if (e) std::rethrow_exception(e);
  return results;
}

}  // namespace crfp
