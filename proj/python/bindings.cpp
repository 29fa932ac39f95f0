#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "meltpool/evaluator.hpp"
#include "meltpool/geometry.hpp"
#include "meltpool/png_io.hpp"
#include "meltpool/seed.hpp"
#include "meltpool/synthetic.hpp"
#include "meltpool/workflow.hpp"

namespace py = pybind11;
using namespace meltpool;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) arrays map to interleaved RawImage data.
RawImage image_from(const F64Array& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw InvalidInput("image array must be 2-D or 3-D");
    const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    RawImage img(w, h, c);
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

F64Array image_to(const RawImage& img) {
    std::vector<py::ssize_t> shape{img.height, img.width};
    if (img.channels > 1) shape.push_back(img.channels);
    F64Array out(shape);
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

AnnotationMask mask_from(const U8Array& a) {
    if (a.ndim() != 2) throw InvalidInput("mask array must be 2-D");
    AnnotationMask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    for (py::ssize_t i = 0; i < a.size(); ++i) {
        if (a.data()[i] > 2) throw InvalidInput("mask labels must be 0, 1 or 2");
        m.labels[static_cast<std::size_t>(i)] = static_cast<PixelClass>(a.data()[i]);
    }
    return m;
}

U8Array mask_to(const AnnotationMask& m) {
    U8Array out({m.height, m.width});
    std::transform(m.labels.begin(), m.labels.end(), out.mutable_data(),
                   [](PixelClass c) { return static_cast<std::uint8_t>(c); });
    return out;
}

U8Array binary_to(const BinaryMask& m) {
    U8Array out({m.height, m.width});
    std::copy(m.values.begin(), m.values.end(), out.mutable_data());
    return out;
}

BinaryMask binary_from(const U8Array& a) {
    if (a.ndim() != 2) throw InvalidInput("mask array must be 2-D");
    BinaryMask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    for (py::ssize_t i = 0; i < a.size(); ++i) m.values[static_cast<std::size_t>(i)] = a.data()[i] != 0;
    return m;
}

std::vector<CorrectionPoint> points_from(const py::list& items) {
    std::vector<CorrectionPoint> out;
    for (const auto& item : items) {
        const auto d = item.cast<py::dict>();
        CorrectionPoint p;
        p.kind = correction_kind_from_string(d["kind"].cast<std::string>());
        p.position = {d["x"].cast<int>(), d["y"].cast<int>()};
        if (d.contains("author")) p.author = d["author"].cast<std::string>();
        if (d.contains("created_at")) p.created_at = d["created_at"].cast<std::string>();
        if (d.contains("image_id")) p.image_id = d["image_id"].cast<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

py::dict ellipse_dict(const EllipseFit& f) {
    py::dict d;
    d["cx"] = f.ellipse.cx;
    d["cy"] = f.ellipse.cy;
    d["a"] = f.ellipse.a;
    d["b"] = f.ellipse.b;
    d["theta"] = f.ellipse.theta;
    d["rms"] = f.rms;
    d["iterations"] = f.iterations;
    return d;
}

WorkflowConfig config_from(const py::dict& d) {
    WorkflowConfig c;
    auto take = [&](const char* key, auto& field) {
        if (d.contains(key)) field = d[key].cast<std::remove_reference_t<decltype(field)>>();
    };
    take("tile_size", c.tile_size);
    take("grid_rows", c.grid_rows);
    take("grid_cols", c.grid_cols);
    take("downscale", c.downscale);
    take("base_filters", c.base_filters);
    take("discriminator_blocks", c.discriminator_blocks);
    take("train_steps", c.train_steps);
    take("batch_size", c.batch_size);
    take("learning_rate", c.learning_rate);
    take("lambda", c.lambda);
    take("checkpoint_interval", c.checkpoint_interval);
    take("validation_fraction", c.validation_fraction);
    take("seed", c.seed);
    return c;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Melt-pool segmentation core";

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<CorrectionError>(m, "CorrectionError", PyExc_ValueError);
    py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);
    py::register_exception<NotFound>(m, "NotFound", PyExc_KeyError);
    py::register_exception<Conflict>(m, "Conflict", PyExc_RuntimeError);
    py::register_exception<ReviewPending>(m, "ReviewPending", PyExc_RuntimeError);
    py::register_exception<ManifestError>(m, "ManifestError", PyExc_RuntimeError);

    m.def("read_png", [](const std::filesystem::path& p) { return image_to(read_png(p)); });
    m.def("write_png", [](const std::filesystem::path& p, const F64Array& a) { write_png(p, image_from(a)); });
    m.def("read_mask_png", [](const std::filesystem::path& p) { return mask_to(read_mask_png(p)); });
    m.def("write_mask_png", [](const std::filesystem::path& p, const U8Array& a) { write_mask_png(p, mask_from(a)); });

    m.def("encode_overlay", [](const U8Array& mask) { return image_to(encode_overlay(mask_from(mask))); },
          "Class mask to RGB overlay.");
    m.def("decode_overlay", [](const F64Array& img) { return mask_to(decode_overlay(image_from(img))); });
    m.def("downscale", [](const F64Array& img, int factor) { return image_to(downscale(image_from(img), factor)); });

    m.def("generate_scene", [](int size, std::uint64_t seed) {
        const SceneSpec spec = small_scene_spec(size, seed);
        const Scene s = generate_scene(spec);
        return py::make_tuple(image_to(s.image), mask_to(s.truth.mask), truth_to_json(s.truth, spec));
    }, py::arg("size"), py::arg("seed"), "Returns (image, mask, truth_json).");

    m.def("seed_annotation", [](const F64Array& img) { return mask_to(seed_annotation(image_from(img))); });
    m.def("region_mask", [](const U8Array& mask) { return binary_to(region_mask(mask_from(mask))); });
    m.def("count_regions", [](const U8Array& binary) { return label_components(binary_from(binary), false).count; });
    m.def("apply_corrections", [](const U8Array& binary, const py::list& points) {
        return binary_to(apply_corrections(binary_from(binary), points_from(points)));
    }, "Applies split/merge points (dicts with kind, x, y) to a binary region mask.");

    m.def("ssim", [](const F64Array& a, const F64Array& b) { return ssim_index(image_from(a), image_from(b)).index; });
    m.def("pixel_accuracy", [](const U8Array& a, const U8Array& b) { return pixel_accuracy(mask_from(a), mask_from(b)); });

    m.def("fit_half_ellipse", [](const F64Array& pts) {
        if (pts.ndim() != 2 || pts.shape(1) != 2) throw InvalidInput("points must have shape (N, 2)");
        std::vector<Vec2> poly;
        for (py::ssize_t i = 0; i < pts.shape(0); ++i) poly.push_back({pts.at(i, 0), pts.at(i, 1)});
        return ellipse_dict(fit_half_ellipse(poly));
    }, "Fits the lower half-ellipse to a closed boundary polygon of (x, y) rows.");

    m.def("mask_statistics", [](const std::vector<U8Array>& masks) {
        std::vector<AnnotationMask> ms;
        for (const auto& a : masks) ms.push_back(mask_from(a));
        return statistics_for_masks(ms).json;
    }, "Pool statistics JSON over one or more class masks.");

    py::class_<Workflow>(m, "Workflow")
        .def(py::init<const std::filesystem::path&>())
        .def_static("create", [](const std::filesystem::path& dir, const py::dict& cfg) {
            return Workflow::create(dir, config_from(cfg));
        }, py::arg("directory"), py::arg("config") = py::dict())
        .def("manifest", [](const Workflow& w) { return manifest_to_json(w.snapshot()); })
        .def("add_image", [](Workflow& w, const F64Array& img, const std::string& provenance) {
            return w.add_image(image_from(img), provenance);
        }, py::arg("image"), py::arg("provenance") = "raw")
        .def("set_annotation", [](Workflow& w, const std::string& id, const U8Array& mask, bool approved) {
            w.set_annotation(id, mask_from(mask), approved ? AnnotationStatus::approved : AnnotationStatus::seed);
        }, py::arg("tile_id"), py::arg("mask"), py::arg("approved") = true)
        .def("seed_tiles", [](Workflow& w, const std::vector<std::string>& ids, bool approve) {
            return w.seed_tiles(ids, approve);
        }, py::arg("tile_ids") = std::vector<std::string>{}, py::arg("approve") = false)
        .def("bootstrap", [](Workflow& w) { return iteration_to_json(w.bootstrap()); },
             py::call_guard<py::gil_scoped_release>())
        .def("advance_iteration", [](Workflow& w, const std::vector<std::string>& batch, bool auto_approve, double timeout) {
            AdvanceOptions o;
            o.auto_approve = auto_approve;
            o.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(timeout * 1000.0));
            return iteration_to_json(w.advance_iteration(batch, o));
        }, py::arg("batch"), py::arg("auto_approve") = false, py::arg("timeout") = 0.0,
             py::call_guard<py::gil_scoped_release>())
        .def("resume_iteration", [](Workflow& w, bool auto_approve, double timeout) {
            AdvanceOptions o;
            o.auto_approve = auto_approve;
            o.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(timeout * 1000.0));
            return iteration_to_json(w.resume_iteration(o));
        }, py::arg("auto_approve") = false, py::arg("timeout") = 0.0, py::call_guard<py::gil_scoped_release>())
        .def("ingest_corrections", [](Workflow& w, const std::string& tile, const py::list& points,
                                      const std::string& request_id, bool approve) {
            return w.ingest_corrections(tile, points_from(points), request_id, approve);
        }, py::arg("tile_id"), py::arg("points"), py::arg("request_id"), py::arg("approve") = false)
        .def("run_statistics", [](Workflow& w, int i) { return w.run_statistics(i).json; })
        .def("rank_checkpoints", [](const Workflow& w) { return evaluation_report_json(w.rank_checkpoints()); },
             py::call_guard<py::gil_scoped_release>())
        .def("unseen_tiles", &Workflow::unseen_tiles)
        .def("load_mask", [](const Workflow& w, const std::string& id) { return mask_to(w.load_mask(id)); })
        .def("load_tile", [](const Workflow& w, const std::string& id) { return image_to(w.load_tile(id)); });
}
