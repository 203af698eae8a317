import { TuringApi } from "./api.js";
import { TestApp } from "./app.js";

const app = new TestApp(new TuringApi(""), document);
app.bind();

// handy for scripted drivers and debugging
(window as unknown as { turingApp: TestApp }).turingApp = app;
