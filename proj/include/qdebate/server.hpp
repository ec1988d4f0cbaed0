#pragma once

#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include <httplib.h>

#include "qdebate/adjudication.hpp"

namespace qdebate {

/// HTTP API over an AdjudicationStore, consumed by the annotation console.
///
///   GET  /api/escalations/next?annotator=ID
///   POST /api/escalations/{id}/label   {"annotator": ID, "label": 0|1|"relevant"|"irrelevant"}
///   GET  /api/progress
///   GET  /api/export/qrels[?partial=1]
class AdjudicationServer {
public:
    /// Produces the export for the current store state; may throw IncompleteAdjudication.
    using Exporter = std::function<ExportResult(bool partial)>;

    AdjudicationServer(AdjudicationStore& store, Exporter exporter, std::filesystem::path static_dir = {})
        : store_(store), exporter_(std::move(exporter)) {
        routes();
        if (!static_dir.empty() && !server_.set_mount_point("/", static_dir.string()))
            throw ConfigError("static directory does not exist: " + static_dir.string());
    }

    bool listen(const std::string& host, int port) { return server_.listen(host, port); }

    /// Binds an ephemeral port; returns it, or -1.
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }

    void stop() { server_.stop(); }
    void wait_until_ready() { server_.wait_until_ready(); }

private:
    static void send(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void fail(httplib::Response& res, int status, const std::string& code, const std::string& message) {
        send(res, status, json{{"error", code}, {"message", message}});
    }

    static int status_of(QueueError::Kind k) {
        switch (k) {
        case QueueError::Kind::unknown_item: return 404;
        case QueueError::Kind::flagged: return 403;
        case QueueError::Kind::not_leased:
        case QueueError::Kind::duplicate:
        case QueueError::Kind::resolved: return 409;
        }
        return 500;
    }

    static std::string_view code_of(QueueError::Kind k) {
        switch (k) {
        case QueueError::Kind::unknown_item: return "unknown_item";
        case QueueError::Kind::flagged: return "annotator_flagged";
        case QueueError::Kind::not_leased: return "not_leased";
        case QueueError::Kind::duplicate: return "duplicate_submission";
        case QueueError::Kind::resolved: return "already_resolved";
        }
        return "error";
    }

    static std::optional<Label> parse_label(const json& v) {
        if (v.is_number_integer()) {
            auto i = v.get<int>();
            if (i == 0 || i == 1)
                return label_from_int(i);
        } else if (v.is_boolean()) {
            return v.get<bool>() ? Label::relevant : Label::irrelevant;
        } else if (v.is_string()) {
            auto s = trim_lower(v.get<std::string>());
            if (s == "relevant" || s == "1" || s == "yes")
                return Label::relevant;
            if (s == "irrelevant" || s == "0" || s == "no")
                return Label::irrelevant;
        }
        return std::nullopt;
    }

    void routes() {
        server_.Get("/api/escalations/next", [this](const httplib::Request& req, httplib::Response& res) {
            const auto annotator = req.get_param_value("annotator");
            if (annotator.empty())
                return fail(res, 400, "bad_request", "query parameter 'annotator' is required");
            if (store_.is_flagged(annotator))
                return fail(res, 403, "annotator_flagged", "annotator " + annotator + " is flagged");
            auto item = store_.assign_next(annotator);
            if (!item)
                return send(res, 200, json{{"item", nullptr}, {"done", true}});
            send(res, 200, json{{"item", item_view(*item)}, {"done", false}});
        });

        server_.Post(R"(/api/escalations/([^/]+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            json body = json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_object())
                return fail(res, 400, "bad_request", "body must be a JSON object");
            if (!body.contains("annotator") || !body["annotator"].is_string() || body["annotator"].get<std::string>().empty())
                return fail(res, 400, "bad_request", "field 'annotator' is required");
            auto label = body.contains("label") ? parse_label(body["label"]) : std::nullopt;
            if (!label)
                return fail(res, 400, "bad_request", "field 'label' must be 0/1 or relevant/irrelevant");
            try {
                auto r = store_.submit(body["annotator"].get<std::string>(), id, *label);
                json out{{"id", r.item_id}, {"status", to_string(r.status)}, {"accepted", true}};
                out["final_label"] = r.final_label ? json(to_int(*r.final_label)) : json(nullptr);
                if (r.attention_failed)
                    out["annotator_flagged"] = true;
                send(res, 200, out);
            } catch (const QueueError& e) {
                fail(res, status_of(e.kind()), std::string(code_of(e.kind())), e.what());
            }
        });

        server_.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
            auto p = store_.progress();
            send(res, 200,
                 json{{"open", p.open},
                      {"in_progress", p.in_progress},
                      {"resolved", p.resolved},
                      {"total", p.open + p.in_progress + p.resolved},
                      {"kappa", p.kappa ? json(*p.kappa) : json(nullptr)},
                      {"flagged_annotators", p.flagged_annotators}});
        });

        server_.Get("/api/export/qrels", [this](const httplib::Request& req, httplib::Response& res) {
            const bool partial = req.has_param("partial") && req.get_param_value("partial") != "0";
            try {
                auto r = exporter_(partial);
                std::ostringstream os;
                write_qrels(os, r.augmented);
                res.status = 200;
                res.set_content(os.str(), "text/plain");
            } catch (const IncompleteAdjudication& e) {
                fail(res, 409, "incomplete_adjudication", e.what());
            }
        });

        server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                fail(res, 500, "internal", e.what());
            } catch (...) {
                fail(res, 500, "internal", "unknown error");
            }
        });
    }

    AdjudicationStore& store_;
    Exporter exporter_;
    httplib::Server server_;
};

} // namespace qdebate
