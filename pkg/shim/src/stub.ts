// Stub model: canned deterministic outputs for protocol conformance tests.
// No weights are loaded; answers are pure functions of the request.

import { readFileSync } from "node:fs";
import { Detection, Role, WireRequest, WireResponse, makeResponse } from "./protocol.js";

export interface StubScenario {
  present_objects: string[];
  tags: string[];
  detections: Record<string, Detection[]>;
  captions: Record<string, string>;
}

export interface StubWorld {
  scenarios: Record<string, StubScenario>;
  generateScript: Record<string, string>;
}

// Shared with the golden wire-protocol frames: image "stub-001".
export const DEFAULT_WORLD: StubWorld = {
  scenarios: {
    "stub-001": {
      present_objects: ["car", "person"],
      tags: ["traffic cone", "truck"],
      detections: {
        "traffic cone": [{ tag: "traffic cone", score: 0.8, box: [0.1, 0.2, 0.3, 0.4] }],
        truck: [{ tag: "truck", score: 0.2, box: [0.5, 0.5, 0.2, 0.2] }],
      },
      captions: {
        "traffic cone": "An orange traffic cone sits in the left lane.",
        truck: "A large truck blocks the right lane",
      },
    },
  },
  generateScript: { ping: "pong" },
};

export class HttpError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

const VQA_PROMPT = /^Is there a (.+) in the image\? Please answer only with yes or no\.$/;

// stub-grade singularization: enough for plural tags against canned worlds
function canonical(term: string): string {
  const word = term.trim().toLowerCase();
  if (word.length > 3 && word.endsWith("s") && !/(ss|us|is)$/.test(word)) {
    return word.slice(0, -1);
  }
  return word;
}

export class StubModel {
  constructor(private world: StubWorld = DEFAULT_WORLD) {}

  static fromFile(path: string): StubModel {
    const raw = JSON.parse(readFileSync(path, "utf-8")) as StubWorld;
    return new StubModel(raw);
  }

  private scenario(request: WireRequest): StubScenario {
    const id = request.image_id;
    const scenario = id === null ? undefined : this.world.scenarios[id];
    if (!scenario) {
      throw new HttpError(404, `no canned scenario for image ${JSON.stringify(id)}`);
    }
    return scenario;
  }

  answer(role: Role, request: WireRequest): WireResponse {
    switch (role) {
      case "vqa": {
        const match = request.prompt === null ? null : VQA_PROMPT.exec(request.prompt);
        if (!match) {
          throw new HttpError(400, "vqa prompt not recognized");
        }
        const scenario = this.scenario(request);
        const wanted = canonical(match[1]);
        const present = scenario.present_objects.some((obj) => canonical(obj) === wanted);
        return makeResponse({ text: present ? "yes" : "no" });
      }
      case "generate": {
        if (request.prompt === null || request.prompt === "") {
          throw new HttpError(400, "generate needs a prompt");
        }
        const scripted = this.world.generateScript[request.prompt];
        return makeResponse({ text: scripted !== undefined ? scripted : request.prompt });
      }
      case "tag": {
        const scenario = this.scenario(request);
        return makeResponse({ tags: [...scenario.tags] });
      }
      case "detect": {
        const scenario = this.scenario(request);
        if (request.tag === null || request.tag === "") {
          throw new HttpError(400, "detect needs a tag");
        }
        const wanted = canonical(request.tag);
        const hits: Detection[] = [];
        for (const [tag, detections] of Object.entries(scenario.detections)) {
          if (canonical(tag) === wanted) {
            hits.push(...detections);
          }
        }
        return makeResponse({ detections: hits });
      }
      case "caption": {
        const scenario = this.scenario(request);
        if (request.tag === null || request.tag === "") {
          throw new HttpError(400, "caption needs a tag");
        }
        const caption = scenario.captions[request.tag];
        return makeResponse({ text: caption !== undefined ? caption : "" });
      }
    }
  }
}
