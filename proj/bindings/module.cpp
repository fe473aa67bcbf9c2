#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "crfp/trainer.hpp"

namespace py = pybind11;
using namespace crfp;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  py::buffer_info b = a.request();
  std::vector<int> shape;
  for (auto d : b.shape) shape.push_back(static_cast<int>(d));
  Tensor t = zeros(shape);
  std::memcpy(t.ptr(), b.ptr, sizeof(float) * static_cast<size_t>(t.numel()));
  return t;
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> a(shape);
  std::memcpy(a.mutable_data(), t.ptr(), sizeof(float) * static_cast<size_t>(t.numel()));
  return a;
}

std::vector<uint8_t> to_mask(const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& a) {
  py::buffer_info b = a.request();
  const uint8_t* p = static_cast<const uint8_t*>(b.ptr);
  return std::vector<uint8_t>(p, p + b.size);
}

// Inference-oriented handle: parameters stay detached, state advances with
// each step() call.
struct PyModel {
  CrfpModel model;
  RecurrentState state;
  bool has_state = false;

  PyModel(const CrfpConfig& cfg, uint64_t seed) : model(cfg, seed) { model.params().detach_all(); }

  static PyModel* from_config(const std::string& config_text, uint64_t seed) {
    return new PyModel(parse_config_text(config_text, "inline").crfp, seed);
  }

  static PyModel* from_checkpoint(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    auto* m = new PyModel(parse_config_text(ck.config, "checkpoint").crfp, 0);
    m->model.import_records(ck);
    return m;
  }

  void reset(const FloatArray& lr0) {
    state = model.reset_state(to_tensor(lr0));
    has_state = true;
  }

  py::array_t<float> step(const FloatArray& lr, const FloatArray& fov, int x0, int y0, int side) {
    if (!has_state) throw UsageError("call reset() before step()");
    auto [y, next] = model.step(state, to_tensor(lr), to_tensor(fov), FovBox{x0, y0, side});
    state = std::move(next);
    return to_array(y);
  }
};

py::list report_rows(const MetricReport& rep) {
  py::list rows;
  for (const auto& r : rep.rows) {
    py::dict d;
    d["clip"] = r.clip;
    d["frame"] = r.frame;
    d["region"] = r.region;
    d["psnr"] = r.psnr;
    d["ssim"] = r.ssim;
    rows.append(d);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Foveated 8x video super-resolution core";
  py::register_exception<Error>(m, "Error");

  // ---- tensor ops ----
  m.def("conv2d",
        [](const FloatArray& x, const FloatArray& w, const FloatArray& b, int stride, int padding) {
          return to_array(conv2d(to_tensor(x), to_tensor(w), to_tensor(b), stride, padding));
        },
        py::arg("x"), py::arg("w"), py::arg("b"), py::arg("stride") = 1, py::arg("padding") = 1);
  m.def("leaky_relu",
        [](const FloatArray& x, float slope) { return to_array(leaky_relu(to_tensor(x), slope)); },
        py::arg("x"), py::arg("slope") = 0.1f);
  m.def("warp_bilinear", [](const FloatArray& x, const FloatArray& flow) {
    return to_array(warp_bilinear(to_tensor(x), to_tensor(flow)));
  });
  m.def("dcn_lite", [](const FloatArray& x, const FloatArray& o, const FloatArray& msk,
                       const FloatArray& w, const FloatArray& b) {
    return to_array(dcn_lite(to_tensor(x), to_tensor(o), to_tensor(msk), to_tensor(w), to_tensor(b)));
  });
  m.def("pixel_shuffle_up",
        [](const FloatArray& x, int r) { return to_array(pixel_shuffle_up(to_tensor(x), r)); });
  m.def("pixel_unshuffle_down",
        [](const FloatArray& x, int r) { return to_array(pixel_unshuffle_down(to_tensor(x), r)); });
  m.def("bilinear_resize",
        [](const FloatArray& x, double s) { return to_array(bilinear_resize(to_tensor(x), s)); });
  m.def("bicubic_resize",
        [](const FloatArray& x, double s) { return to_array(bicubic_resize(to_tensor(x), s)); });
  m.def("charbonnier",
        [](const FloatArray& a, const FloatArray& b, float eps) {
          return charbonnier_loss(to_tensor(a), to_tensor(b), eps).ptr()[0];
        },
        py::arg("pred"), py::arg("target"), py::arg("eps") = 1e-3f);

  // ---- foveation ----
  py::class_<FovBox>(m, "FovBox")
      .def(py::init<>())
      .def(py::init([](int x0, int y0, int side) { return FovBox{x0, y0, side}; }))
      .def_readwrite("x0", &FovBox::x0)
      .def_readwrite("y0", &FovBox::y0)
      .def_readwrite("side", &FovBox::side)
      .def("__eq__", [](const FovBox& a, const FovBox& b) { return a == b; })
      .def("__repr__", [](const FovBox& b) {
        return "FovBox(x0=" + std::to_string(b.x0) + ", y0=" + std::to_string(b.y0) +
               ", side=" + std::to_string(b.side) + ")";
      });
  py::class_<GazeTrace>(m, "GazeTrace")
      .def_readonly("boxes", &GazeTrace::boxes)
      .def_readonly("sigma", &GazeTrace::sigma)
      .def_readonly("seed", &GazeTrace::seed);
  m.def("clamp_crop", &clamp_crop, py::arg("frame_w"), py::arg("frame_h"), py::arg("cx"),
        py::arg("cy"), py::arg("side"));
  m.def("raster_trajectory", &raster_trajectory);
  m.def("horizontal_trajectory", &horizontal_trajectory);
  m.def("tracker_trajectory", &tracker_trajectory);
  m.def("save_trace", &save_trace);
  m.def("load_trace", &load_trace);

  // ---- metrics ----
  m.def("masked_psnr", [](const FloatArray& a, const FloatArray& b,
                          const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& mask) {
    return masked_psnr(to_tensor(a), to_tensor(b), to_mask(mask));
  });
  m.def("masked_ssim", [](const FloatArray& a, const FloatArray& b,
                          const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& mask) {
    return masked_ssim(to_tensor(a), to_tensor(b), to_mask(mask));
  });
  m.def("ssim_map", [](const FloatArray& a, const FloatArray& b) {
    Tensor ta = to_tensor(a);
    std::vector<float> v = ssim_map(ta, to_tensor(b));
    py::array_t<float> out({static_cast<py::ssize_t>(ta.dim(2)), static_cast<py::ssize_t>(ta.dim(3))});
    std::memcpy(out.mutable_data(), v.data(), sizeof(float) * v.size());
    return out;
  });

  // ---- data ----
  m.def("read_image", [](const std::string& path) { return to_array(read_image(path)); });
  m.def("write_image",
        [](const FloatArray& frame, const std::string& path) { write_image(to_tensor(frame), path); });
  m.def("synth_clip", [](int w, int h, int frames, uint64_t seed) {
    FrameSequence seq = synth_clip(w, h, frames, seed);
    py::list out;
    for (const Tensor& f : seq.hr) out.append(to_array(f));
    return out;
  });

  // ---- model / pipeline ----
  py::class_<PyModel>(m, "Model")
      .def(py::init(&PyModel::from_config), py::arg("config_text") = "", py::arg("seed") = 1)
      .def_static("load", &PyModel::from_checkpoint, py::arg("checkpoint_path"))
      .def_property_readonly("param_count", [](const PyModel& p) { return p.model.param_count(); })
      .def("reset", &PyModel::reset, py::arg("lr0"))
      .def("step", &PyModel::step, py::arg("lr"), py::arg("fov"), py::arg("x0"), py::arg("y0"),
           py::arg("side"));

  m.def("train",
        [](const std::string& config_text, const std::string& resume) {
          RunConfig cfg = parse_config_text(config_text, "inline");
          cfg.validate();
          return train_loop(cfg, resume);
        },
        py::arg("config_text"), py::arg("resume") = "",
        py::call_guard<py::gil_scoped_release>());
  m.def("evaluate",
        [](const std::string& config_text, const std::string& checkpoint, int jobs) {
          RunConfig cfg = parse_config_text(config_text, "inline");
          cfg.validate();
          MetricReport merged;
          {
            py::gil_scoped_release rel;
            std::vector<EvalClipResult> results;
            if (checkpoint.empty()) {
              results = run_eval(cfg, nullptr, jobs);
            } else {
              Checkpoint ck = load_checkpoint(checkpoint);
              CrfpModel model(parse_config_text(ck.config, "checkpoint").crfp, 0);
              model.import_records(ck);
              results = run_eval(cfg, &model, jobs);
            }
            for (const auto& r : results)
              merged.rows.insert(merged.rows.end(), r.report.rows.begin(), r.report.rows.end());
          }
          return report_rows(merged);
        },
        py::arg("config_text"), py::arg("checkpoint") = "", py::arg("jobs") = 1);
}
