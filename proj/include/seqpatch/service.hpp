#pragma once

#include "json.hpp"

#include <chrono>
#include <map>
#include <string>

#include "seqpatch/metrics.hpp"
#include "seqpatch/png_io.hpp"
#include "seqpatch/rle.hpp"
#include "seqpatch/trainer.hpp"
#include "seqpatch/volume_io.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's headers.
#include "httplib.h"

namespace seqpatch {

struct HttpReply {
    int status = 200;
    std::string body;
    std::string content_type = "application/json; charset=utf-8";
};

inline HttpReply json_reply(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json; charset=utf-8"}; }
inline HttpReply error_reply(int status, const std::string& msg) { return json_reply(status, {{"error", msg}}); }

/// Min-max scaled 8-bit PNG of one slice.
inline std::string slice_png(const Image& img)
{
    const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
    std::vector<float> px(img.size(), 0.0f);
    if (*hi > *lo)
        for (std::size_t i = 0; i < img.size(); ++i)
            px[i] = (img[i] - *lo) / (*hi - *lo);
    return encode_unit_png(px.data(), img.dim(1), img.dim(0));
}

/// Click-to-segment endpoints over the volumes of a manifest. Volumes and parameters are
/// loaded once and never mutated, so handlers may run concurrently.
class SegmentService {
public:
    SegmentService(ModelParams<float> params, const Manifest& manifest, ExtractionConfig geometry = {})
        : params_(std::move(params)), manifest_(manifest), geometry_(geometry)
    {
        for (const auto& e : manifest_.entries)
            volumes_.emplace(e.id, manifest_.load(e));
    }

    HttpReply list_volumes() const
    {
        nlohmann::json vols = nlohmann::json::array();
        for (const auto& e : manifest_.entries) {
            const Volume& v = volumes_.at(e.id);
            vols.push_back({{"id", e.id},
                            {"split", e.split},
                            {"dims", {v.depth(), v.height(), v.width()}},
                            {"spacing", {v.spacing[0], v.spacing[1], v.spacing[2]}},
                            {"has_mask", v.mask.has_value()}});
        }
        return json_reply(200, {{"volumes", vols}});
    }

    HttpReply slice_image(const std::string& id, const std::string& index) const
    {
        const Volume* v = find(id);
        if (!v)
            return error_reply(404, "unknown volume '" + id + "'");
        const auto k = parse_index(index);
        if (!k || *k >= v->depth())
            return error_reply(404, "no slice " + index + " in volume '" + id + "'");
        return {200, slice_png(v->slice(*k)), "image/png"};
    }

    /// Body: {"volume_id", "slice_index", "click_x", "click_y"}.
    HttpReply segment(const std::string& body) const
    {
        const auto start = std::chrono::steady_clock::now();
        nlohmann::json req;
        try {
            req = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            return error_reply(400, std::string("malformed JSON: ") + e.what());
        }
        if (!req.is_object())
            return error_reply(400, "request must be a JSON object");
        for (const char* key : {"volume_id", "slice_index", "click_x", "click_y"})
            if (!req.contains(key))
                return error_reply(400, std::string("missing field '") + key + "'");
        if (!req["volume_id"].is_string())
            return error_reply(400, "volume_id must be a string");
        for (const char* key : {"slice_index", "click_x", "click_y"})
            if (!req[key].is_number_integer())
                return error_reply(400, std::string(key) + " must be an integer");
        const std::string id = req["volume_id"].get<std::string>();
        const Volume* v = find(id);
        if (!v)
            return error_reply(404, "unknown volume '" + id + "'");
        const auto k = req["slice_index"].get<std::int64_t>();
        if (k < 0 || static_cast<std::size_t>(k) >= v->depth())
            return error_reply(404, "no slice " + std::to_string(k) + " in volume '" + id + "'");
        const auto x = req["click_x"].get<std::int64_t>(), y = req["click_y"].get<std::int64_t>();
        if (x < 0 || y < 0 || static_cast<std::size_t>(x) >= v->width() || static_cast<std::size_t>(y) >= v->height())
            return error_reply(400, "click (" + std::to_string(x) + "," + std::to_string(y) + ") outside the "
                                        + std::to_string(v->width()) + "x" + std::to_string(v->height()) + " slice");

        const auto slice = static_cast<std::size_t>(k);
        const SegmentResult r =
            segment_slice(params_, v->slice(slice), {static_cast<int>(x), static_cast<int>(y)}, geometry_);
        const Image prob = r.likelihood.fused_map();
        nlohmann::json out{{"volume_id", id},
                           {"slice_index", slice},
                           {"width", v->width()},
                           {"height", v->height()},
                           {"mask_rle", rle_encode(r.mask.values())},
                           {"prob_map", base64_encode(encode_unit_png(prob.data(), v->width(), v->height()))}};
        out["dsc"] = v->mask ? nlohmann::json(dsc(r.mask, v->mask_slice(slice))) : nlohmann::json(nullptr);
        out["latency_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return json_reply(200, out);
    }

    void attach(httplib::Server& server) const
    {
        auto send = [](httplib::Response& res, const HttpReply& r) {
            res.status = r.status;
            res.set_content(r.body, r.content_type);
        };
        server.Get("/api/volumes", [this, send](const httplib::Request&, httplib::Response& res) {
            send(res, list_volumes());
        });
        server.Get(R"(/api/volumes/([^/]+)/slices/([^/]+))",
                   [this, send](const httplib::Request& req, httplib::Response& res) {
                       send(res, slice_image(req.matches[1], req.matches[2]));
                   });
        server.Post("/api/segment", [this, send](const httplib::Request& req, httplib::Response& res) {
            send(res, segment(req.body));
        });
        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string msg = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                msg = e.what();
            } catch (...) {
            }
            res.status = 500;
            res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json; charset=utf-8");
        });
        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty())
                res.set_content(nlohmann::json{{"error", httplib::status_message(res.status)}}.dump(),
                                "application/json; charset=utf-8");
        });
    }

private:
    const Volume* find(const std::string& id) const
    {
        const auto it = volumes_.find(id);
        return it == volumes_.end() ? nullptr : &it->second;
    }

    static std::optional<std::size_t> parse_index(const std::string& s)
    {
        if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
            return std::nullopt;
        return static_cast<std::size_t>(std::stoul(s));
    }

    ModelParams<float> params_;
    Manifest manifest_;
    ExtractionConfig geometry_;
    std::map<std::string, Volume> volumes_;
};

} // namespace seqpatch
