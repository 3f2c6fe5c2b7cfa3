use serde_json::{json, Value};

/// Every route the router mounts, as `(method, OpenAPI path)`.
pub const ROUTES: [(&str, &str); 7] = [
    ("get", "/v1/healthz"),
    ("post", "/v1/infer"),
    ("post", "/v1/sessions"),
    ("get", "/v1/sessions/{id}"),
    ("post", "/v1/sessions/{id}/edits"),
    ("post", "/v1/sessions/{id}/recompute"),
    ("get", "/v1/bank/search"),
];

fn schema(name: &str) -> Value {
    json!({ "$ref": format!("#/components/schemas/{name}") })
}

fn body(name: &str) -> Value {
    json!({ "required": true, "content": { "application/json": { "schema": schema(name) } } })
}

fn ok(description: &str, name: &str) -> Value {
    json!({ "description": description, "content": { "application/json": { "schema": schema(name) } } })
}

fn err(description: &str) -> Value {
    ok(description, "ApiError")
}

fn session_id() -> Value {
    json!({ "name": "id", "in": "path", "required": true, "schema": { "type": "string" } })
}

fn session_errors(mut responses: Value) -> Value {
    responses["404"] = err("Unknown session");
    responses["410"] = err("Session expired");
    responses
}

fn components() -> Value {
    let float = json!({ "type": "number", "format": "float" });
    json!({
        "ApiError": {
            "type": "object",
            "required": ["code", "message"],
            "properties": {
                "code": { "type": "string", "enum": ["bad_request", "not_found", "dimension_mismatch", "provider_error", "expired", "internal"] },
                "message": { "type": "string" },
                "detail": { "type": "object" }
            }
        },
        "InferRequest": {
            "type": "object",
            "required": ["embedding"],
            "properties": {
                "embedding": { "type": "array", "items": float },
                "k": { "type": "integer", "minimum": 1, "description": "Concepts to retrieve; defaults to the server setting and is capped at the bank size." },
                "solver": { "type": "string", "enum": ["lasso", "elastic_net", "htp", "least_squares", "similarity"] },
                "lambda": { "type": "number", "exclusiveMinimum": 0, "description": "L1 weight for lasso and elastic_net." }
            }
        },
        "ClassScore": {
            "type": "object",
            "required": ["label_id", "name", "score"],
            "properties": { "label_id": { "type": "integer" }, "name": { "type": "string" }, "score": float }
        },
        "Concept": {
            "type": "object",
            "required": ["text", "weight"],
            "properties": { "text": { "type": "string" }, "bank_index": { "type": "integer" }, "weight": float }
        },
        "Prediction": {
            "type": "object",
            "required": ["label_id", "label", "fallback", "class_scores", "concepts", "nonzero_count", "retrieved", "solver", "converged"],
            "properties": {
                "label_id": { "type": "integer" },
                "label": { "type": "string" },
                "fallback": { "type": "boolean", "description": "The reconstruction vanished and the label was scored on the input." },
                "class_scores": { "type": "array", "items": schema("ClassScore") },
                "concepts": { "type": "array", "items": schema("Concept"), "description": "Nonzero weights, largest magnitude first." },
                "nonzero_count": { "type": "integer" },
                "retrieved": { "type": "integer" },
                "solver": { "type": "string", "enum": ["lasso", "elastic_net", "htp", "least_squares", "similarity"] },
                "lambda": float,
                "converged": { "type": "boolean" }
            }
        },
        "SessionCreated": {
            "type": "object",
            "required": ["session_id", "prediction"],
            "properties": { "session_id": { "type": "string" }, "prediction": schema("Prediction") }
        },
        "SessionConcept": {
            "type": "object",
            "required": ["index", "text", "source", "weight", "deleted"],
            "properties": {
                "index": { "type": "integer" },
                "text": { "type": "string" },
                "bank_index": { "type": "integer" },
                "source": { "type": "string", "enum": ["retrieved", "inserted"] },
                "weight": float,
                "deleted": { "type": "boolean" }
            }
        },
        "HistoryEntry": {
            "type": "object",
            "required": ["seq", "at_ms", "op"],
            "properties": {
                "seq": { "type": "integer" },
                "at_ms": { "type": "integer" },
                "op": { "type": "string", "enum": ["delete", "restore", "insert"] },
                "index": { "type": "integer" },
                "concept": { "type": "string" }
            }
        },
        "Session": {
            "type": "object",
            "required": ["session_id", "k", "pending", "base_label_id", "prediction", "concepts", "history"],
            "properties": {
                "session_id": { "type": "string" },
                "k": { "type": "integer" },
                "pending": { "type": "boolean", "description": "Edits were applied since the last recompute." },
                "base_label_id": { "type": "integer" },
                "prediction": schema("Prediction"),
                "concepts": { "type": "array", "items": schema("SessionConcept") },
                "history": { "type": "array", "items": schema("HistoryEntry") }
            }
        },
        "EditRequest": {
            "type": "object",
            "required": ["op"],
            "properties": {
                "op": { "type": "string", "enum": ["delete", "restore", "insert"] },
                "index": { "type": "integer", "description": "Session concept index for delete and restore." },
                "concept": { "type": "string", "description": "Concept text for insert; embedded through the provider." }
            }
        },
        "SearchResponse": {
            "type": "object",
            "required": ["query", "results"],
            "properties": {
                "query": { "type": "string" },
                "results": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["index", "text", "score"],
                        "properties": { "index": { "type": "integer" }, "text": { "type": "string" }, "score": float }
                    }
                }
            }
        },
        "Health": {
            "type": "object",
            "required": ["status", "bank_count", "dim"],
            "properties": { "status": { "type": "string" }, "bank_count": { "type": "integer" }, "dim": { "type": "integer" } }
        }
    })
}

/// The API description written to `docs/openapi.json`.
pub fn openapi_document() -> Value {
    json!({
        "openapi": "3.0.3",
        "info": {
            "title": "zcbm service",
            "version": env!("CARGO_PKG_VERSION"),
            "description": "Concept bottleneck inference and intervention sessions over precomputed embeddings. Floats are 32-bit values printed with at most nine significant digits."
        },
        "paths": {
            "/v1/healthz": {
                "get": { "summary": "Liveness and bank shape", "responses": { "200": ok("Service is up", "Health") } }
            },
            "/v1/infer": {
                "post": {
                    "summary": "Predict a label and its concept explanation",
                    "requestBody": body("InferRequest"),
                    "responses": {
                        "200": ok("Prediction; identical requests return identical bytes", "Prediction"),
                        "400": err("Malformed body, bad parameter or dimension_mismatch"),
                        "422": err("Non-finite number in the request")
                    }
                }
            },
            "/v1/sessions": {
                "post": {
                    "summary": "Open an intervention session",
                    "requestBody": body("InferRequest"),
                    "responses": {
                        "200": ok("Session id and base prediction", "SessionCreated"),
                        "400": err("Malformed body, bad parameter or dimension_mismatch"),
                        "422": err("Non-finite number in the request")
                    }
                }
            },
            "/v1/sessions/{id}": {
                "get": {
                    "summary": "Current session state with edit history",
                    "parameters": [session_id()],
                    "responses": session_errors(json!({ "200": ok("Session state", "Session") }))
                }
            },
            "/v1/sessions/{id}/edits": {
                "post": {
                    "summary": "Delete, restore or insert a concept",
                    "parameters": [session_id()],
                    "requestBody": body("EditRequest"),
                    "responses": session_errors(json!({
                        "200": ok("Session state after the edit", "Session"),
                        "400": err("Malformed edit"),
                        "502": err("Embedding provider failed")
                    }))
                }
            },
            "/v1/sessions/{id}/recompute": {
                "post": {
                    "summary": "Apply pending edits and refresh the prediction",
                    "parameters": [session_id()],
                    "responses": session_errors(json!({ "200": ok("Session state with the new prediction", "Session") }))
                }
            },
            "/v1/bank/search": {
                "get": {
                    "summary": "Bank concepts closest to a text query",
                    "parameters": [
                        { "name": "q", "in": "query", "required": true, "schema": { "type": "string" } },
                        { "name": "n", "in": "query", "required": false, "schema": { "type": "integer", "minimum": 1, "default": crate::routes::DEFAULT_SEARCH_N } }
                    ],
                    "responses": {
                        "200": ok("Top-n concepts by cosine", "SearchResponse"),
                        "400": err("Missing or invalid parameter"),
                        "502": err("Embedding provider failed or is not configured")
                    }
                }
            }
        },
        "components": { "schemas": components() }
    })
}
