import { LabelServiceClient } from './api.js';
import { initApp } from './app.js';

initApp(document, new LabelServiceClient(''));
