import { loadModel } from "./embedder.js";
import { createService } from "./service.js";

const port = Number(process.env.EMBED_PORT ?? "8632");
const modelName = process.env.EMBED_MODEL ?? "feature-hash-v1";
const dim = Number(process.env.EMBED_DIM ?? "384");

const model = loadModel(modelName, dim);
const { server, markReady } = createService(model);

server.listen(port, () => {
  // The hash model is ready immediately; a heavier model would flip the
  // health latch only after its weights finish loading.
  markReady();
  console.log(`embed-service listening on :${port} (model=${model.name}, dim=${model.dim})`);
});
