// shim --role vqa --model ID --port N [--stub] [--fixtures F] [--adapter M]
//
// Stub mode serves canned deterministic outputs without loading weights.
// Serving a real model requires an adapter module (default export:
// (modelId, device) => ModelBackend); without one, startup fails with a
// diagnostic and a nonzero exit.

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { createApp, ModelBackend, stubBackend } from "./server.js";
import { ROLES, Role } from "./protocol.js";

async function loadAdapter(
  adapterModule: string,
  modelId: string,
  device: string
): Promise<ModelBackend> {
  const mod = await import(adapterModule);
  const factory = mod.default;
  if (typeof factory !== "function") {
    throw new Error(`adapter ${adapterModule} has no default factory export`);
  }
  return factory(modelId, device) as ModelBackend;
}

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .option("role", {
      type: "string",
      choices: [...ROLES, "all"],
      demandOption: true,
      describe: "which model role this process serves",
    })
    .option("model", { type: "string", default: "stub", describe: "model identifier" })
    .option("port", { type: "number", demandOption: true })
    .option("device", { type: "string", default: "cpu" })
    .option("stub", {
      type: "boolean",
      default: false,
      describe: "serve canned outputs without loading any model",
    })
    .option("fixtures", { type: "string", describe: "canned world JSON for stub mode" })
    .option("adapter", { type: "string", describe: "module binding a real model backend" })
    .strict()
    .parse();

  if (args.port < 1024 || args.port > 65535) {
    console.error(`error: port ${args.port} outside [1024, 65535]`);
    return 2;
  }

  let backend: ModelBackend;
  if (args.stub) {
    backend = stubBackend(args.model, args.fixtures);
  } else if (args.adapter) {
    try {
      backend = await loadAdapter(args.adapter, args.model, args.device);
    } catch (err) {
      console.error(`error: cannot load model ${args.model}: ${(err as Error).message}`);
      return 1;
    }
  } else {
    console.error(
      `error: cannot load model ${args.model}: no adapter module given ` +
        "(pass --adapter, or use --stub for canned outputs)"
    );
    return 1;
  }

  const app = createApp({ role: args.role as Role | "all", backend });
  await new Promise<void>((resolve) => {
    const server = app.listen(args.port, () => {
      console.log(
        `shim serving role=${args.role} model=${backend.modelId} on port ${args.port}` +
          (args.stub ? " (stub mode)" : "")
      );
    });
    process.on("SIGINT", () => server.close(() => resolve()));
    process.on("SIGTERM", () => server.close(() => resolve()));
  });
  return 0;
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js");
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => {
    if (code !== 0) process.exit(code);
  });
}
