export * from "./channels.js";
export * from "./fgct.js";
export * from "./losses.js";
export * from "./model.js";
export * from "./train.js";
export * from "./experiment.js";
