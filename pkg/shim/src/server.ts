// HTTP server exposing one role (or all of them, multiplexed) over the
// pipeline wire protocol. Requests are handled serially per model; express
// queues concurrent requests.

import express from "express";
import { HttpError, StubModel } from "./stub.js";
import {
  ROLES,
  ROUTES,
  Role,
  WireRequest,
  WireResponse,
  canonicalJson,
  parseWireRequest,
} from "./protocol.js";

export interface ModelBackend {
  modelId: string;
  answer(role: Role, request: WireRequest): WireResponse;
}

export interface ServerConfig {
  role: Role | "all";
  backend: ModelBackend;
}

export function stubBackend(modelId = "stub", fixturesPath?: string): ModelBackend {
  const model = fixturesPath ? StubModel.fromFile(fixturesPath) : new StubModel();
  return {
    modelId,
    answer: (role, request) => model.answer(role, request),
  };
}

function sendJson(res: express.Response, status: number, payload: unknown): void {
  const body = canonicalJson(payload);
  res.status(status).set("Content-Type", "application/json").send(body);
}

export function createApp(config: ServerConfig): express.Express {
  const app = express();
  app.use(express.raw({ type: () => true, limit: "16mb" }));

  const served: Role[] = config.role === "all" ? ROLES : [config.role];

  app.get("/healthz", (_req, res) => {
    sendJson(res, 200, { role: config.role, model_id: config.backend.modelId });
  });

  for (const role of served) {
    app.post(ROUTES[role], (req, res) => {
      let request: WireRequest;
      try {
        request = parseWireRequest(req.body as Buffer);
      } catch (err) {
        sendJson(res, 400, { error: `malformed request body: ${(err as Error).message}` });
        return;
      }
      try {
        sendJson(res, 200, config.backend.answer(role, request));
      } catch (err) {
        if (err instanceof HttpError) {
          sendJson(res, err.status, { error: err.message });
        } else {
          sendJson(res, 500, { error: `backend failure: ${(err as Error).message}` });
        }
      }
    });
  }

  app.use((_req, res) => {
    sendJson(res, 404, { error: "unknown route" });
  });

  return app;
}
